#include "rainbow/presets.hpp"

#include <algorithm>
#include <cstdio>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

CovarianceSpec power_law_cov(double exponent, double scale = 1.0) {
    CovarianceSpec c;
    c.kind = CovarianceSpec::Kind::power_law;
    c.exponent = exponent;
    c.scale = scale;
    return c;
}

CovarianceSpec identity_cov(double scale = 1.0) {
    CovarianceSpec c;
    c.kind = CovarianceSpec::Kind::identity;
    c.scale = scale;
    return c;
}

LayerSpec tanh_layer() {
    LayerSpec l;
    l.width_is_dim = true;
    l.activation = ActivationId::tanh;
    return l;
}

ScenarioConfig fig1(double gamma, bool caption_cross) {
    ScenarioConfig cfg;
    char name[64];
    std::snprintf(name, sizeof(name), "fig1-gamma%.1f%s", gamma, caption_cross ? "-caption" : "");
    cfg.name = name;
    cfg.description =
        "Four-layer tanh student with tied first layers learning a one-layer tanh teacher; "
        "power-law weight covariances with decay gamma.";
    cfg.dimension = 1000;
    cfg.ridge_lambda = 1e-4;
    cfg.noise_trace = 0.0;
    cfg.sample_ratios = {0.5, 1.0, 2.0, 3.0};
    cfg.replicates = 20;
    cfg.master_seed = 20240501;

    CovarianceSpec input = identity_cov(1.0);

    RainbowSpec teacher;
    {
        LayerSpec l = tanh_layer();
        l.rule.kind = WeightRule::Kind::fresh_gaussian;
        l.rule.cov = power_law_cov(0.3);
        teacher.layers.push_back(l);
        teacher.readout.kind = ReadoutSpec::Kind::iid_gaussian;
        teacher.readout.variance = 1.0;
    }

    RainbowSpec student;
    {
        // W1 = 1/2 Z1 diag(k^{-gamma/2}) + 1/2 W*
        LayerSpec l1 = tanh_layer();
        l1.rule.kind = WeightRule::Kind::mixed;
        l1.rule.fresh_coeff = 0.5;
        l1.rule.teacher_coeff = 0.5;
        l1.rule.fresh_cov = power_law_cov(gamma);
        l1.rule.teacher_layer = 0;
        if (caption_cross) l1.rule.cross_cov_override = identity_cov(0.5);
        student.layers.push_back(l1);
        // W2 = W1
        LayerSpec l2 = tanh_layer();
        l2.rule.kind = WeightRule::Kind::tied_to_layer;
        l2.rule.tied_index = 0;
        student.layers.push_back(l2);
        // C3 = (W1 W1^T + I/2)^{-1}
        LayerSpec l3 = tanh_layer();
        l3.rule.kind = WeightRule::Kind::fresh_gaussian;
        l3.rule.cov.kind = CovarianceSpec::Kind::function_of_weights;
        l3.rule.cov.rule = "inv_gram_plus_half";
        l3.rule.cov.source_network = "student";
        l3.rule.cov.source_layer = 0;
        l3.rule.cov.shift = 0.5;
        student.layers.push_back(l3);
    }

    cfg.teacher = teacher;
    cfg.student = student;
    cfg.teacher.input_covariance = input;
    cfg.student.input_covariance = input;
    cfg.teacher.input_dim = cfg.dimension;
    cfg.student.input_dim = cfg.dimension;
    for (auto& l : cfg.teacher.layers) l.width = cfg.dimension;
    for (auto& l : cfg.student.layers) l.width = cfg.dimension;
    return cfg;
}

ScenarioConfig lab_small() {
    ScenarioConfig cfg;
    cfg.name = "lab-small";
    cfg.description = "Compact one-layer tanh pair for the verification battery.";
    cfg.dimension = 200;
    cfg.ridge_lambda = 1e-3;
    cfg.noise_trace = 0.25;
    cfg.sample_ratios = {0.5, 1.0, 2.0};
    cfg.replicates = 16;
    cfg.master_seed = 977281;

    CovarianceSpec input = identity_cov(1.0);
    RainbowSpec teacher;
    {
        LayerSpec l = tanh_layer();
        l.rule.kind = WeightRule::Kind::fresh_gaussian;
        l.rule.cov = power_law_cov(0.3);
        teacher.layers.push_back(l);
        teacher.readout.kind = ReadoutSpec::Kind::iid_gaussian;
        teacher.readout.variance = 1.0;
    }
    RainbowSpec student;
    {
        LayerSpec l = tanh_layer();
        l.rule.kind = WeightRule::Kind::mixed;
        l.rule.fresh_coeff = 0.5;
        l.rule.teacher_coeff = 0.5;
        l.rule.fresh_cov = power_law_cov(0.5);
        l.rule.teacher_layer = 0;
        student.layers.push_back(l);
    }
    cfg.teacher = teacher;
    cfg.student = student;
    cfg.teacher.input_covariance = input;
    cfg.student.input_covariance = input;
    cfg.teacher.input_dim = cfg.dimension;
    cfg.student.input_dim = cfg.dimension;
    for (auto& l : cfg.teacher.layers) l.width = cfg.dimension;
    for (auto& l : cfg.student.layers) l.width = cfg.dimension;
    return cfg;
}

ScenarioConfig lincheck() {
    ScenarioConfig cfg;
    cfg.name = "lincheck";
    cfg.description =
        "One-layer tanh student vs two-layer tanh teacher with correlated first layers "
        "(cross covariance = C~1 / 2); used by the linearization decay check. Covariances "
        "carry an isotropic part so pre-activation variances stay O(1) at every width.";
    cfg.dimension = 200;
    cfg.ridge_lambda = 1e-3;
    cfg.noise_trace = 0.0;
    cfg.sample_ratios = {1.0};
    cfg.replicates = 8;
    cfg.master_seed = 551234;

    auto iso_plus_power = [](double w_iso, double w_pl, double exponent) {
        CovarianceSpec c;
        c.kind = CovarianceSpec::Kind::shifted_power_law_mix;
        c.mix_w1 = w_iso;
        c.mix_e1 = 0.0;
        c.mix_w2 = w_pl;
        c.mix_e2 = exponent;
        return c;
    };

    CovarianceSpec input = identity_cov(1.0);
    RainbowSpec teacher;
    {
        LayerSpec l1 = tanh_layer();
        l1.rule.kind = WeightRule::Kind::fresh_gaussian;
        l1.rule.cov = iso_plus_power(3.6, 2.2, 0.3);
        teacher.layers.push_back(l1);
        LayerSpec l2 = tanh_layer();
        l2.rule.kind = WeightRule::Kind::fresh_gaussian;
        l2.rule.cov = iso_plus_power(4.0, 2.0, 0.3);
        teacher.layers.push_back(l2);
        teacher.readout.kind = ReadoutSpec::Kind::iid_gaussian;
        teacher.readout.variance = 1.0;
    }
    RainbowSpec student;
    {
        LayerSpec l = tanh_layer();
        l.rule.kind = WeightRule::Kind::mixed;
        l.rule.fresh_coeff = 0.4;
        l.rule.teacher_coeff = 0.5;
        l.rule.fresh_cov = iso_plus_power(9.0, 6.0, 0.5);
        l.rule.teacher_layer = 0;
        student.layers.push_back(l);
    }
    cfg.teacher = teacher;
    cfg.student = student;
    cfg.teacher.input_covariance = input;
    cfg.student.input_covariance = input;
    cfg.teacher.input_dim = cfg.dimension;
    cfg.student.input_dim = cfg.dimension;
    for (auto& l : cfg.teacher.layers) l.width = cfg.dimension;
    for (auto& l : cfg.student.layers) l.width = cfg.dimension;
    return cfg;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const char* g : {"0.0", "0.2", "0.5", "0.8"}) {
        names.push_back(std::string("fig1-gamma") + g);
        names.push_back(std::string("fig1-gamma") + g + "-caption");
    }
    names.push_back("lab-small");
    names.push_back("lincheck");
    return names;
}

bool is_preset(const std::string& name) {
    const auto names = preset_names();
    return std::find(names.begin(), names.end(), name) != names.end();
}

ScenarioConfig preset_scenario(const std::string& name) {
    for (double g : {0.0, 0.2, 0.5, 0.8}) {
        char base[32], cap[48];
        std::snprintf(base, sizeof(base), "fig1-gamma%.1f", g);
        std::snprintf(cap, sizeof(cap), "fig1-gamma%.1f-caption", g);
        if (name == base) return fig1(g, false);
        if (name == cap) return fig1(g, true);
    }
    if (name == "lab-small") return lab_small();
    if (name == "lincheck") return lincheck();
    throw config_error("unknown preset '" + name + "'");
}

}  // namespace rainbow
