#include "rainbow/config.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rainbow/common.hpp"
#include "rainbow/matrix_io.hpp"

namespace rainbow {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw config_error(where + ": " + what);
}

const json& require(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) fail(where, std::string("missing field '") + key + "'");
    return *it;
}

double require_number(const json& j, const char* key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_number()) fail(where + "." + key, "expected a number");
    return v.get<double>();
}

std::string require_string(const json& j, const char* key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_string()) fail(where + "." + key, "expected a string");
    return v.get<std::string>();
}

std::string resolve_path(const std::string& raw, const std::string& base_dir) {
    std::filesystem::path p(raw);
    if (p.is_absolute() || base_dir.empty()) return raw;
    return (std::filesystem::path(base_dir) / p).string();
}

CovarianceSpec cov_from_json(const json& j, const std::string& base_dir, const std::string& where) {
    if (!j.is_object()) fail(where, "covariance spec must be an object");
    CovarianceSpec spec;
    const std::string kind = require_string(j, "kind", where);
    if (j.contains("norm_budget")) spec.norm_budget = j.at("norm_budget").get<double>();
    if (kind == "identity") {
        spec.kind = CovarianceSpec::Kind::identity;
        spec.scale = j.value("scale", 1.0);
    } else if (kind == "power_law") {
        spec.kind = CovarianceSpec::Kind::power_law;
        spec.exponent = require_number(j, "exponent", where);
        spec.scale = j.value("scale", 1.0);
        if (spec.exponent < 0.0) fail(where + ".exponent", "power-law exponent must be >= 0");
    } else if (kind == "diagonal") {
        spec.kind = CovarianceSpec::Kind::diagonal;
        const json& vals = require(j, "values", where);
        if (!vals.is_array()) fail(where + ".values", "expected an array");
        for (const auto& v : vals) spec.values.push_back(v.get<double>());
    } else if (kind == "file") {
        spec.kind = CovarianceSpec::Kind::file;
        spec.path = resolve_path(require_string(j, "path", where), base_dir);
        if (!std::filesystem::exists(spec.path))
            fail(where + ".path", "file does not exist: " + spec.path);
    } else if (kind == "shifted_power_law_mix") {
        spec.kind = CovarianceSpec::Kind::shifted_power_law_mix;
        spec.mix_w1 = require_number(j, "weight1", where);
        spec.mix_e1 = require_number(j, "exponent1", where);
        spec.mix_w2 = require_number(j, "weight2", where);
        spec.mix_e2 = require_number(j, "exponent2", where);
        if (spec.mix_w1 < 0.0 || spec.mix_w2 < 0.0) fail(where, "mix weights must be >= 0");
        if (spec.mix_e1 < 0.0 || spec.mix_e2 < 0.0) fail(where, "mix exponents must be >= 0");
    } else if (kind == "function_of_weights") {
        spec.kind = CovarianceSpec::Kind::function_of_weights;
        spec.rule = require_string(j, "rule", where);
        if (spec.rule != "inv_gram_plus_half")
            fail(where + ".rule", "unknown rule '" + spec.rule + "'");
        spec.source_network = j.value("source_network", std::string("student"));
        if (spec.source_network != "student" && spec.source_network != "teacher")
            fail(where + ".source_network", "must be 'student' or 'teacher'");
        spec.source_layer = require(j, "source_layer", where).get<int>();
        spec.shift = j.value("shift", 0.5);
    } else {
        fail(where + ".kind", "unknown covariance kind '" + kind + "'");
    }
    return spec;
}

json cov_to_json(const CovarianceSpec& spec) {
    json j;
    switch (spec.kind) {
        case CovarianceSpec::Kind::identity:
            j["kind"] = "identity";
            j["scale"] = spec.scale;
            break;
        case CovarianceSpec::Kind::power_law:
            j["kind"] = "power_law";
            j["exponent"] = spec.exponent;
            j["scale"] = spec.scale;
            break;
        case CovarianceSpec::Kind::diagonal:
            j["kind"] = "diagonal";
            j["values"] = spec.values;
            break;
        case CovarianceSpec::Kind::file:
            j["kind"] = "file";
            j["path"] = spec.path;
            break;
        case CovarianceSpec::Kind::shifted_power_law_mix:
            j["kind"] = "shifted_power_law_mix";
            j["weight1"] = spec.mix_w1;
            j["exponent1"] = spec.mix_e1;
            j["weight2"] = spec.mix_w2;
            j["exponent2"] = spec.mix_e2;
            break;
        case CovarianceSpec::Kind::function_of_weights:
            j["kind"] = "function_of_weights";
            j["rule"] = spec.rule;
            j["source_network"] = spec.source_network;
            j["source_layer"] = spec.source_layer;
            j["shift"] = spec.shift;
            break;
    }
    if (spec.norm_budget != kDefaultNormBudget) j["norm_budget"] = spec.norm_budget;
    return j;
}

int parse_width(const json& v, int dim, bool* is_dim, const std::string& where) {
    if (v.is_string()) {
        if (v.get<std::string>() != "dim")
            fail(where, "width must be a positive integer or the string \"dim\"");
        *is_dim = true;
        return dim;
    }
    if (!v.is_number_integer() || v.get<int>() <= 0)
        fail(where, "width must be a positive integer or the string \"dim\"");
    *is_dim = false;
    return v.get<int>();
}

WeightRule rule_from_json(const json& j, const std::string& base_dir, const std::string& where) {
    WeightRule rule;
    const std::string kind = require_string(j, "kind", where);
    if (kind == "fresh_gaussian") {
        rule.kind = WeightRule::Kind::fresh_gaussian;
        rule.cov = cov_from_json(require(j, "cov", where), base_dir, where + ".cov");
    } else if (kind == "tied_to_layer") {
        rule.kind = WeightRule::Kind::tied_to_layer;
        rule.tied_index = require(j, "index", where).get<int>();
    } else if (kind == "mixed") {
        rule.kind = WeightRule::Kind::mixed;
        rule.fresh_coeff = require_number(j, "fresh_coeff", where);
        rule.teacher_coeff = require_number(j, "teacher_coeff", where);
        rule.fresh_cov = cov_from_json(require(j, "fresh_cov", where), base_dir, where + ".fresh_cov");
        rule.teacher_layer = require(j, "teacher_layer", where).get<int>();
    } else if (kind == "function_of_previous") {
        rule.kind = WeightRule::Kind::function_of_previous;
        rule.rule = require_string(j, "rule", where);
        if (rule.rule != "inv_gram_plus_half") fail(where + ".rule", "unknown rule '" + rule.rule + "'");
        rule.source_layer = require(j, "source_layer", where).get<int>();
        rule.shift = j.value("shift", 0.5);
    } else if (kind == "external") {
        rule.kind = WeightRule::Kind::external;
    } else {
        fail(where + ".kind", "unknown weight rule '" + kind + "'");
    }
    if (j.contains("cross_cov_override"))
        rule.cross_cov_override =
            cov_from_json(j.at("cross_cov_override"), base_dir, where + ".cross_cov_override");
    return rule;
}

json rule_to_json(const WeightRule& rule) {
    json j;
    switch (rule.kind) {
        case WeightRule::Kind::fresh_gaussian:
            j["kind"] = "fresh_gaussian";
            j["cov"] = cov_to_json(rule.cov);
            break;
        case WeightRule::Kind::tied_to_layer:
            j["kind"] = "tied_to_layer";
            j["index"] = rule.tied_index;
            break;
        case WeightRule::Kind::mixed:
            j["kind"] = "mixed";
            j["fresh_coeff"] = rule.fresh_coeff;
            j["teacher_coeff"] = rule.teacher_coeff;
            j["fresh_cov"] = cov_to_json(rule.fresh_cov);
            j["teacher_layer"] = rule.teacher_layer;
            break;
        case WeightRule::Kind::function_of_previous:
            j["kind"] = "function_of_previous";
            j["rule"] = rule.rule;
            j["source_layer"] = rule.source_layer;
            j["shift"] = rule.shift;
            break;
        case WeightRule::Kind::external:
            j["kind"] = "external";
            break;
    }
    if (rule.cross_cov_override) j["cross_cov_override"] = cov_to_json(*rule.cross_cov_override);
    return j;
}

RainbowSpec network_from_json(const json& j, int dim, bool is_teacher,
                              const std::string& base_dir, const std::string& where) {
    RainbowSpec net;
    net.input_dim = dim;
    const json& layers = require(j, "layers", where);
    if (!layers.is_array() || layers.empty()) fail(where + ".layers", "expected a non-empty array");
    int idx = 0;
    for (const auto& lj : layers) {
        const std::string lw = where + ".layers[" + std::to_string(idx) + "]";
        LayerSpec layer;
        layer.width = parse_width(require(lj, "width", lw), dim, &layer.width_is_dim, lw + ".width");
        layer.activation = activation_from_name(require_string(lj, "activation", lw));
        layer.rule = rule_from_json(require(lj, "weight_rule", lw), base_dir, lw + ".weight_rule");
        net.layers.push_back(std::move(layer));
        ++idx;
    }
    if (is_teacher) {
        const json& rj = require(j, "readout", where);
        const std::string rw = where + ".readout";
        const std::string kind = require_string(rj, "kind", rw);
        if (kind == "iid_gaussian") {
            net.readout.kind = ReadoutSpec::Kind::iid_gaussian;
            net.readout.variance = rj.value("variance", 1.0);
            if (net.readout.variance <= 0.0) fail(rw + ".variance", "must be > 0");
        } else if (kind == "file") {
            net.readout.kind = ReadoutSpec::Kind::file;
            net.readout.path = resolve_path(require_string(rj, "path", rw), base_dir);
            if (!std::filesystem::exists(net.readout.path))
                fail(rw + ".path", "file does not exist: " + net.readout.path);
        } else {
            fail(rw + ".kind", "unknown readout kind '" + kind + "'");
        }
    }
    return net;
}

json network_to_json(const RainbowSpec& net, bool is_teacher) {
    json j;
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json lj;
        if (layer.width_is_dim)
            lj["width"] = "dim";
        else
            lj["width"] = layer.width;
        lj["activation"] = activation_name(layer.activation);
        lj["weight_rule"] = rule_to_json(layer.rule);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    if (is_teacher) {
        json rj;
        if (net.readout.kind == ReadoutSpec::Kind::iid_gaussian) {
            rj["kind"] = "iid_gaussian";
            rj["variance"] = net.readout.variance;
        } else {
            rj["kind"] = "file";
            rj["path"] = net.readout.path;
        }
        j["readout"] = std::move(rj);
    }
    return j;
}

void validate_network(const RainbowSpec& net, bool is_teacher, int teacher_depth,
                      const std::string& where) {
    for (int l = 0; l < net.depth(); ++l) {
        const auto& layer = net.layers[static_cast<std::size_t>(l)];
        const std::string lw = where + ".layers[" + std::to_string(l) + "]";
        if (layer.width <= 0) fail(lw + ".width", "must be positive");
        const auto& rule = layer.rule;
        switch (rule.kind) {
            case WeightRule::Kind::tied_to_layer: {
                if (rule.tied_index >= l)
                    fail(lw + ".weight_rule.index",
                         "forward reference: tied layer must be strictly earlier");
                if (rule.tied_index < 0) fail(lw + ".weight_rule.index", "negative layer index");
                const auto& src = net.layers[static_cast<std::size_t>(rule.tied_index)];
                if (src.width != layer.width ||
                    net.layer_input_dim(rule.tied_index) != net.layer_input_dim(l))
                    fail(lw + ".weight_rule.index", "tied layer has a different shape");
                break;
            }
            case WeightRule::Kind::mixed: {
                if (is_teacher)
                    fail(lw + ".weight_rule", "mixed rule is only valid on the student network");
                if (rule.teacher_layer < 0 || rule.teacher_layer >= teacher_depth)
                    fail(lw + ".weight_rule.teacher_layer", "no such teacher layer");
                break;
            }
            case WeightRule::Kind::function_of_previous: {
                if (rule.source_layer < 0 || rule.source_layer >= l)
                    fail(lw + ".weight_rule.source_layer",
                         "forward reference: source layer must be strictly earlier");
                break;
            }
            case WeightRule::Kind::fresh_gaussian: {
                const auto& cov = rule.cov;
                if (cov.kind == CovarianceSpec::Kind::function_of_weights) {
                    if (cov.source_network == "student" && !is_teacher &&
                        cov.source_layer >= l)
                        fail(lw + ".weight_rule.cov.source_layer",
                             "forward reference: source layer must be strictly earlier");
                    if (is_teacher && cov.source_network == "student")
                        fail(lw + ".weight_rule.cov.source_network",
                             "teacher covariance cannot depend on student weights");
                }
                break;
            }
            case WeightRule::Kind::external: break;
        }
    }
}

}  // namespace

Eigen::MatrixXd materialize_covariance(const CovarianceSpec& spec, Eigen::Index dim,
                                       const WeightContext& context) {
    if (dim <= 0) throw config_error("materialize_covariance: dim must be positive");
    Eigen::MatrixXd m;
    switch (spec.kind) {
        case CovarianceSpec::Kind::identity: {
            if (spec.scale < 0.0)
                throw config_error("materialize_covariance: non-PSD materialization (scale < 0)");
            m = spec.scale * Eigen::MatrixXd::Identity(dim, dim);
            break;
        }
        case CovarianceSpec::Kind::power_law: {
            if (spec.scale < 0.0)
                throw config_error("materialize_covariance: non-PSD materialization (scale < 0)");
            m = Eigen::MatrixXd::Zero(dim, dim);
            for (Eigen::Index k = 0; k < dim; ++k)
                m(k, k) = spec.scale * std::pow(static_cast<double>(k + 1), -spec.exponent);
            break;
        }
        case CovarianceSpec::Kind::diagonal: {
            if (static_cast<Eigen::Index>(spec.values.size()) != dim)
                throw config_error("materialize_covariance: diagonal values length " +
                                   std::to_string(spec.values.size()) + " != dim " +
                                   std::to_string(dim));
            m = Eigen::MatrixXd::Zero(dim, dim);
            for (Eigen::Index k = 0; k < dim; ++k) {
                const double v = spec.values[static_cast<std::size_t>(k)];
                if (v < 0.0)
                    throw config_error(
                        "materialize_covariance: non-PSD materialization (negative diagonal)");
                m(k, k) = v;
            }
            break;
        }
        case CovarianceSpec::Kind::file: {
            m = read_matrix(spec.path);
            if (m.rows() != m.cols())
                throw config_error("materialize_covariance: file matrix is not square");
            if (m.rows() != dim)
                throw config_error("materialize_covariance: file matrix dim " +
                                   std::to_string(m.rows()) + " != requested " +
                                   std::to_string(dim));
            const double asym = (m - m.transpose()).norm();
            if (asym > 1e-12 * std::max(1.0, m.norm()))
                throw config_error("materialize_covariance: file matrix is not symmetric");
            m = 0.5 * (m + m.transpose());
            break;
        }
        case CovarianceSpec::Kind::shifted_power_law_mix: {
            m = Eigen::MatrixXd::Zero(dim, dim);
            for (Eigen::Index k = 0; k < dim; ++k) {
                const double kk = static_cast<double>(k + 1);
                m(k, k) = spec.mix_w1 * std::pow(kk, -spec.mix_e1) +
                          spec.mix_w2 * std::pow(kk, -spec.mix_e2);
            }
            break;
        }
        case CovarianceSpec::Kind::function_of_weights: {
            const std::vector<Eigen::MatrixXd>* source =
                spec.source_network == "teacher" ? context.teacher : context.student;
            if (source == nullptr || spec.source_layer < 0 ||
                spec.source_layer >= static_cast<int>(source->size()))
                throw config_error(
                    "materialize_covariance: missing context for function_of_weights");
            const Eigen::MatrixXd& w = (*source)[static_cast<std::size_t>(spec.source_layer)];
            if (w.rows() != dim)
                throw config_error("materialize_covariance: function_of_weights dim mismatch");
            // inv_gram_plus_half: (W W^T + shift I)^{-1}
            Eigen::MatrixXd gram = w * w.transpose();
            gram.diagonal().array() += spec.shift;
            Eigen::LLT<Eigen::MatrixXd> llt(gram);
            if (llt.info() != Eigen::Success)
                throw config_error("materialize_covariance: non-PSD materialization (gram)");
            m = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
            m = 0.5 * (m + m.transpose());
            break;
        }
    }

    // PSD check: dense specs get one Cholesky with a single 1e-12 jitter
    // retry; diagonal specs were validated entrywise above.
    if (spec.kind == CovarianceSpec::Kind::file ||
        spec.kind == CovarianceSpec::Kind::function_of_weights) {
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() != Eigen::Success) {
            Eigen::MatrixXd jittered = m;
            jittered.diagonal().array() += 1e-12;
            Eigen::LLT<Eigen::MatrixXd> retry(jittered);
            if (retry.info() != Eigen::Success)
                throw config_error("materialize_covariance: non-PSD materialization");
        }
    }

    const double norm = symmetric_operator_norm(m);
    if (norm > spec.norm_budget)
        throw config_error("materialize_covariance: operator norm " + std::to_string(norm) +
                           " exceeds declared budget " + std::to_string(spec.norm_budget));
    return m;
}

double symmetric_operator_norm(const Eigen::MatrixXd& m) {
    const Eigen::Index n = m.rows();
    if (n == 0) return 0.0;
    if (m.isDiagonal(1e-300)) return m.diagonal().cwiseAbs().maxCoeff();
    // Power iteration with a fixed deterministic start.
    Eigen::VectorXd v(n);
    std::uint64_t s = 0x9E3779B97F4A7C15ull;
    for (Eigen::Index i = 0; i < n; ++i) {
        s = splitmix64(s);
        v(i) = static_cast<double>(s >> 11) / 9007199254740992.0 - 0.5;
    }
    v.normalize();
    double norm = 0.0;
    for (int it = 0; it < 60; ++it) {
        Eigen::VectorXd w = m * v;
        const double wn = w.norm();
        if (wn == 0.0) return 0.0;
        v = w / wn;
        norm = wn;
    }
    return norm;
}

Eigen::MatrixXd covariance_sqrt(const Eigen::MatrixXd& cov) {
    if (cov.isDiagonal(1e-300)) {
        Eigen::MatrixXd root = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
        for (Eigen::Index i = 0; i < cov.rows(); ++i) {
            const double v = cov(i, i);
            if (v < -1e-12) throw numeric_error("covariance_sqrt: negative diagonal entry");
            root(i, i) = std::sqrt(std::max(v, 0.0));
        }
        return root;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw numeric_error("covariance_sqrt: eigensolver failed");
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd roots(cov.rows());
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
        double v = es.eigenvalues()(i);
        if (v < -1e-12 * scale)
            throw numeric_error("covariance_sqrt: matrix is indefinite (eigenvalue " +
                                std::to_string(v) + ")");
        roots(i) = std::sqrt(std::max(v, 0.0));
    }
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

ScenarioConfig scenario_from_json(const json& j, const std::string& base_dir,
                                  const LoadOptions& opts) {
    if (!j.is_object()) throw config_error("scenario: top-level JSON must be an object");
    const std::string where = "scenario";
    ScenarioConfig cfg;
    cfg.name = j.value("name", std::string());
    cfg.description = j.value("description", std::string());
    cfg.dimension = opts.dim_override ? *opts.dim_override
                                      : require(j, "dimension", where).get<int>();
    if (cfg.dimension <= 0) fail(where + ".dimension", "must be positive");
    cfg.ridge_lambda = require_number(j, "ridge_lambda", where);
    if (cfg.ridge_lambda <= 0.0) fail(where + ".ridge_lambda", "lambda must be > 0");
    cfg.noise_trace = j.value("noise_trace", 0.0);
    if (cfg.noise_trace < 0.0) fail(where + ".noise_trace", "must be >= 0");
    if (j.contains("noise_covariance"))
        cfg.noise_covariance =
            cov_from_json(j.at("noise_covariance"), base_dir, where + ".noise_covariance");
    const json& ratios = require(j, "sample_ratios", where);
    if (!ratios.is_array() || ratios.empty())
        fail(where + ".sample_ratios", "expected a non-empty array");
    for (const auto& r : ratios) {
        const double a = r.get<double>();
        if (a <= 0.0) fail(where + ".sample_ratios", "every alpha must be > 0");
        cfg.sample_ratios.push_back(a);
    }
    cfg.replicates = opts.replicates_override ? *opts.replicates_override
                                              : require(j, "replicates", where).get<int>();
    if (cfg.replicates < 1) fail(where + ".replicates", "must be >= 1");
    cfg.master_seed = opts.seed_override
                          ? *opts.seed_override
                          : require(j, "master_seed", where).get<std::uint64_t>();
    cfg.norm_budget = j.value("norm_budget", kDefaultNormBudget);

    CovarianceSpec input_cov =
        cov_from_json(require(j, "input_covariance", where), base_dir, where + ".input_covariance");
    cfg.teacher = network_from_json(require(j, "teacher", where), cfg.dimension, true, base_dir,
                                    where + ".teacher");
    cfg.student = network_from_json(require(j, "student", where), cfg.dimension, false, base_dir,
                                    where + ".student");
    cfg.teacher.input_covariance = input_cov;
    cfg.student.input_covariance = input_cov;

    validate_network(cfg.teacher, true, cfg.teacher.depth(), where + ".teacher");
    validate_network(cfg.student, false, cfg.teacher.depth(), where + ".student");
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw config_error("load_scenario: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw config_error("load_scenario: parse error in " + path + ": " + e.what());
    }
    const std::string base_dir = std::filesystem::path(path).parent_path().string();
    return scenario_from_json(j, base_dir, opts);
}

json scenario_to_json(const ScenarioConfig& cfg) {
    json j;
    if (!cfg.name.empty()) j["name"] = cfg.name;
    if (!cfg.description.empty()) j["description"] = cfg.description;
    j["dimension"] = cfg.dimension;
    j["ridge_lambda"] = cfg.ridge_lambda;
    j["noise_trace"] = cfg.noise_trace;
    if (cfg.noise_covariance) j["noise_covariance"] = cov_to_json(*cfg.noise_covariance);
    j["sample_ratios"] = cfg.sample_ratios;
    j["replicates"] = cfg.replicates;
    j["master_seed"] = cfg.master_seed;
    if (cfg.norm_budget != kDefaultNormBudget) j["norm_budget"] = cfg.norm_budget;
    j["input_covariance"] = cov_to_json(cfg.student.input_covariance);
    j["teacher"] = network_to_json(cfg.teacher, true);
    j["student"] = network_to_json(cfg.student, false);
    return j;
}

void save_scenario(const ScenarioConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("save_scenario: cannot open " + path);
    out << scenario_to_json(cfg).dump(2) << '\n';
}

std::uint64_t scenario_hash(const ScenarioConfig& cfg) {
    return fnv1a64(scenario_to_json(cfg).dump());
}

}  // namespace rainbow
