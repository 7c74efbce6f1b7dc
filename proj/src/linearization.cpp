#include "rainbow/linearization.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

// Every realized weight matrix is a linear combination of independent
// Gaussian "atoms" (fresh draws with a known row covariance). Tracking the
// combinations makes C, C~ and the cross C^ exact for tied and mixed layers.
struct AtomTerm {
    int atom_id;
    double coeff;
    const Eigen::MatrixXd* cov;  // row covariance of the atom
};
using AtomCombo = std::vector<AtomTerm>;

Eigen::MatrixXd combo_self_covariance(const AtomCombo& combo, Eigen::Index dim) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& t : combo) c += t.coeff * t.coeff * (*t.cov);
    return c;
}

Eigen::MatrixXd combo_cross_covariance(const AtomCombo& a, const AtomCombo& b, Eigen::Index dim) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& ta : a)
        for (const auto& tb : b)
            if (ta.atom_id == tb.atom_id) c += ta.coeff * tb.coeff * (*ta.cov);
    return c;
}

double normalized_trace_product(const Eigen::MatrixXd& c, const Eigen::MatrixXd& sigma) {
    // <C Sigma> = Tr[C Sigma] / dim; clamp quadrature-noise negatives.
    const double t = (c.array() * sigma.transpose().array()).sum() / static_cast<double>(c.rows());
    if (t < 0.0) {
        const double tol = 1e-12 * std::max(1.0, c.norm() * sigma.norm());
        if (t < -tol)
            throw numeric_error("linearize_pair: negative pre-activation variance " +
                                std::to_string(t));
        return 0.0;
    }
    return t;
}

}  // namespace

Eigen::MatrixXd estimate_row_covariance(const Eigen::MatrixXd& weights) {
    if (weights.rows() < 2)
        throw numeric_error("estimate_row_covariance: need at least 2 rows");
    const double scale =
        static_cast<double>(weights.cols()) / static_cast<double>(weights.rows());
    return scale * (weights.transpose() * weights);
}

Eigen::MatrixXd estimate_row_covariance(const Eigen::MatrixXd& weights,
                                        const Eigen::MatrixXd& companion) {
    if (weights.rows() != companion.rows())
        throw numeric_error("estimate_row_covariance: row-count mismatch with companion");
    if (weights.rows() < 2)
        throw numeric_error("estimate_row_covariance: need at least 2 rows");
    const double scale =
        static_cast<double>(weights.cols()) / static_cast<double>(weights.rows());
    return scale * (weights.transpose() * companion);
}

LayerCovariances derive_layer_covariances(const std::vector<Eigen::MatrixXd>& student_weights,
                                          const RainbowSpec& student,
                                          const std::vector<Eigen::MatrixXd>& teacher_weights,
                                          const RainbowSpec& teacher) {
    const int ls = student.depth();
    const int lt = teacher.depth();
    if (static_cast<int>(student_weights.size()) != ls ||
        static_cast<int>(teacher_weights.size()) != lt)
        throw config_error("derive_layer_covariances: weight matrices missing for some layers");

    WeightContext ctx;
    ctx.student = &student_weights;
    ctx.teacher = &teacher_weights;

    LayerCovariances out;
    out.student.resize(static_cast<std::size_t>(ls));
    out.teacher.resize(static_cast<std::size_t>(lt));
    out.student_provenance.assign(static_cast<std::size_t>(ls), "declared");
    out.teacher_provenance.assign(static_cast<std::size_t>(lt), "declared");

    // Materialized atom covariances live here so AtomCombo pointers stay valid.
    std::vector<std::unique_ptr<Eigen::MatrixXd>> atom_covs;
    int next_atom = 0;
    auto new_atom = [&](Eigen::MatrixXd cov) {
        atom_covs.push_back(std::make_unique<Eigen::MatrixXd>(std::move(cov)));
        return AtomTerm{next_atom++, 1.0, atom_covs.back().get()};
    };

    std::vector<AtomCombo> teacher_combos(static_cast<std::size_t>(lt));
    std::vector<AtomCombo> student_combos(static_cast<std::size_t>(ls));

    for (int l = 0; l < lt; ++l) {
        const auto& rule = teacher.layers[static_cast<std::size_t>(l)].rule;
        const Eigen::Index in_dim = teacher.layer_input_dim(l);
        switch (rule.kind) {
            case WeightRule::Kind::fresh_gaussian:
                teacher_combos[static_cast<std::size_t>(l)] = {
                    new_atom(materialize_covariance(rule.cov, in_dim, ctx))};
                break;
            case WeightRule::Kind::tied_to_layer:
                teacher_combos[static_cast<std::size_t>(l)] =
                    teacher_combos[static_cast<std::size_t>(rule.tied_index)];
                break;
            case WeightRule::Kind::function_of_previous: {
                CovarianceSpec cov;
                cov.kind = CovarianceSpec::Kind::function_of_weights;
                cov.rule = rule.rule;
                cov.source_network = "teacher";
                cov.source_layer = rule.source_layer;
                cov.shift = rule.shift;
                teacher_combos[static_cast<std::size_t>(l)] = {
                    new_atom(materialize_covariance(cov, in_dim, ctx))};
                break;
            }
            case WeightRule::Kind::external:
                teacher_combos[static_cast<std::size_t>(l)] = {new_atom(
                    estimate_row_covariance(teacher_weights[static_cast<std::size_t>(l)]))};
                out.teacher_provenance[static_cast<std::size_t>(l)] = "estimated";
                break;
            case WeightRule::Kind::mixed:
                throw config_error("mixed rule is only valid on the student network");
        }
        out.teacher[static_cast<std::size_t>(l)] =
            combo_self_covariance(teacher_combos[static_cast<std::size_t>(l)], in_dim);
    }

    for (int l = 0; l < ls; ++l) {
        const auto& rule = student.layers[static_cast<std::size_t>(l)].rule;
        const Eigen::Index in_dim = student.layer_input_dim(l);
        switch (rule.kind) {
            case WeightRule::Kind::fresh_gaussian:
                student_combos[static_cast<std::size_t>(l)] = {
                    new_atom(materialize_covariance(rule.cov, in_dim, ctx))};
                break;
            case WeightRule::Kind::tied_to_layer:
                student_combos[static_cast<std::size_t>(l)] =
                    student_combos[static_cast<std::size_t>(rule.tied_index)];
                break;
            case WeightRule::Kind::mixed: {
                AtomCombo combo = {new_atom(materialize_covariance(rule.fresh_cov, in_dim, ctx))};
                combo[0].coeff = rule.fresh_coeff;
                for (AtomTerm t : teacher_combos[static_cast<std::size_t>(rule.teacher_layer)]) {
                    t.coeff *= rule.teacher_coeff;
                    combo.push_back(t);
                }
                student_combos[static_cast<std::size_t>(l)] = std::move(combo);
                break;
            }
            case WeightRule::Kind::function_of_previous: {
                CovarianceSpec cov;
                cov.kind = CovarianceSpec::Kind::function_of_weights;
                cov.rule = rule.rule;
                cov.source_network = "student";
                cov.source_layer = rule.source_layer;
                cov.shift = rule.shift;
                student_combos[static_cast<std::size_t>(l)] = {
                    new_atom(materialize_covariance(cov, in_dim, ctx))};
                break;
            }
            case WeightRule::Kind::external:
                student_combos[static_cast<std::size_t>(l)] = {new_atom(
                    estimate_row_covariance(student_weights[static_cast<std::size_t>(l)]))};
                out.student_provenance[static_cast<std::size_t>(l)] = "estimated";
                break;
        }
        out.student[static_cast<std::size_t>(l)] =
            combo_self_covariance(student_combos[static_cast<std::size_t>(l)], in_dim);
    }

    const int shared = std::min(ls, lt);
    out.cross.resize(static_cast<std::size_t>(shared));
    for (int l = 0; l < shared; ++l) {
        const Eigen::Index in_dim = student.layer_input_dim(l);
        const auto& srule = student.layers[static_cast<std::size_t>(l)].rule;
        if (srule.cross_cov_override) {
            out.cross[static_cast<std::size_t>(l)] =
                materialize_covariance(*srule.cross_cov_override, in_dim, ctx);
        } else if (srule.kind == WeightRule::Kind::external ||
                   teacher.layers[static_cast<std::size_t>(l)].rule.kind ==
                       WeightRule::Kind::external) {
            out.cross[static_cast<std::size_t>(l)] =
                estimate_row_covariance(student_weights[static_cast<std::size_t>(l)],
                                        teacher_weights[static_cast<std::size_t>(l)]);
        } else {
            out.cross[static_cast<std::size_t>(l)] = combo_cross_covariance(
                student_combos[static_cast<std::size_t>(l)],
                teacher_combos[static_cast<std::size_t>(l)], in_dim);
        }
    }
    return out;
}

LinearizationResult linearize_pair(const std::vector<Eigen::MatrixXd>& student_weights,
                                   const RainbowSpec& student,
                                   const std::vector<Eigen::MatrixXd>& teacher_weights,
                                   const RainbowSpec& teacher, const Eigen::MatrixXd& omega0) {
    const int ls = student.depth();
    const int lt = teacher.depth();
    const int shared = std::min(ls, lt);
    const int total = std::max(ls, lt);
    if (omega0.rows() != omega0.cols() || omega0.rows() != student.input_dim)
        throw config_error("linearize_pair: omega0 dimension mismatch");

    for (int l = 0; l < shared; ++l) {
        if (student.layers[static_cast<std::size_t>(l)].width !=
            teacher.layers[static_cast<std::size_t>(l)].width)
            throw config_error("linearize_pair: width mismatch at shared layer " +
                               std::to_string(l));
        if (student_weights[static_cast<std::size_t>(l)].rows() !=
                teacher_weights[static_cast<std::size_t>(l)].rows() ||
            student_weights[static_cast<std::size_t>(l)].cols() !=
                teacher_weights[static_cast<std::size_t>(l)].cols())
            throw config_error("linearize_pair: weight shape mismatch at shared layer " +
                               std::to_string(l));
    }

    LayerCovariances covs =
        derive_layer_covariances(student_weights, student, teacher_weights, teacher);

    LinearizationResult res;
    res.ladder.student_cov_provenance = covs.student_provenance;
    res.ladder.teacher_cov_provenance = covs.teacher_provenance;
    res.omega_layers.push_back(omega0);
    res.psi_layers.push_back(omega0);
    res.phi_layers.push_back(omega0);

    Eigen::MatrixXd omega = omega0, psi = omega0, phi = omega0;

    for (int l = 0; l < total; ++l) {
        const bool has_student = l < ls;
        const bool has_teacher = l < lt;
        if (has_student && has_teacher) {
            const auto& wl = student_weights[static_cast<std::size_t>(l)];
            const auto& vl = teacher_weights[static_cast<std::size_t>(l)];
            const ActivationId act_s = student.layers[static_cast<std::size_t>(l)].activation;
            const ActivationId act_t = teacher.layers[static_cast<std::size_t>(l)].activation;
            const double r_s =
                normalized_trace_product(covs.student[static_cast<std::size_t>(l)], omega);
            const double r_t =
                normalized_trace_product(covs.teacher[static_cast<std::size_t>(l)], psi);
            // r^ = Tr[C^_l^T Phi_{l-1}] / p_l, kept signed.
            const Eigen::MatrixXd& cc = covs.cross[static_cast<std::size_t>(l)];
            double r_c = (cc.transpose().array() * phi.transpose().array()).sum() /
                         static_cast<double>(cc.rows());
            // |r^| <= sqrt(r_s r_t); clip the tolerance sliver.
            const double bound = std::sqrt(std::max(r_s * r_t, 0.0));
            if (std::abs(r_c) > bound) {
                if (std::abs(r_c) > bound + 1e-10 * std::max(1.0, bound))
                    throw numeric_error(
                        "linearize_pair: cross pre-activation variance " + std::to_string(r_c) +
                        " at layer " + std::to_string(l) + " breaches the Gram bound " +
                        std::to_string(bound) +
                        " (the declared cross covariance is not jointly realizable)");
                r_c = r_c > 0.0 ? bound : -bound;
            }
            KappaLayer ks = make_kappa_layer(act_s, r_s);
            KappaLayer kt = make_kappa_layer(act_t, r_t);
            CrossKappa ck = make_cross_kappa(act_s, act_t, r_s, r_t, r_c);
            omega = (ks.kappa1 * ks.kappa1) * (wl * omega * wl.transpose());
            omega.diagonal().array() += ks.kappa_star_sq;
            psi = (kt.kappa1 * kt.kappa1) * (vl * psi * vl.transpose());
            psi.diagonal().array() += kt.kappa_star_sq;
            phi = (ks.kappa1 * kt.kappa1) * (wl * phi * vl.transpose());
            phi.diagonal().array() += ck.cross_sq;
            res.ladder.student.push_back(ks);
            res.ladder.teacher.push_back(kt);
            res.ladder.cross.push_back(ck);
        } else if (has_teacher) {
            // Teacher continues alone: Psi keeps the full recursion, Phi picks
            // up the teacher matrix one-sided with no isotropic term.
            const auto& vl = teacher_weights[static_cast<std::size_t>(l)];
            const ActivationId act_t = teacher.layers[static_cast<std::size_t>(l)].activation;
            const double r_t =
                normalized_trace_product(covs.teacher[static_cast<std::size_t>(l)], psi);
            KappaLayer kt = make_kappa_layer(act_t, r_t);
            psi = (kt.kappa1 * kt.kappa1) * (vl * psi * vl.transpose());
            psi.diagonal().array() += kt.kappa_star_sq;
            phi = kt.kappa1 * (phi * vl.transpose());
            res.ladder.teacher.push_back(kt);
        } else {
            const auto& wl = student_weights[static_cast<std::size_t>(l)];
            const ActivationId act_s = student.layers[static_cast<std::size_t>(l)].activation;
            const double r_s =
                normalized_trace_product(covs.student[static_cast<std::size_t>(l)], omega);
            KappaLayer ks = make_kappa_layer(act_s, r_s);
            omega = (ks.kappa1 * ks.kappa1) * (wl * omega * wl.transpose());
            omega.diagonal().array() += ks.kappa_star_sq;
            phi = ks.kappa1 * (wl * phi);
            res.ladder.student.push_back(ks);
        }
        omega = 0.5 * (omega + omega.transpose());
        psi = 0.5 * (psi + psi.transpose());
        res.omega_layers.push_back(omega);
        res.psi_layers.push_back(psi);
        res.phi_layers.push_back(phi);
    }

    res.triple.omega = omega;
    res.triple.psi = psi;
    res.triple.phi = phi;
    return res;
}

EffectiveLinearNet effective_linear_net(const std::vector<Eigen::MatrixXd>& student_weights,
                                        const std::vector<KappaLayer>& student_kappas) {
    const int depth = static_cast<int>(student_weights.size());
    if (depth == 0) throw config_error("effective_linear_net: no layers");
    if (static_cast<int>(student_kappas.size()) != depth)
        throw config_error("effective_linear_net: kappa ladder depth mismatch");
    for (int l = 0; l + 1 < depth; ++l)
        if (student_weights[static_cast<std::size_t>(l + 1)].cols() !=
            student_weights[static_cast<std::size_t>(l)].rows())
            throw config_error("effective_linear_net: dimension mismatch in the product chain");

    const Eigen::Index p = student_weights.back().rows();
    // Suffix products S_l = W_L ... W_{l+1}; S_depth = I.
    std::vector<Eigen::MatrixXd> suffix(static_cast<std::size_t>(depth) + 1);
    suffix[static_cast<std::size_t>(depth)] = Eigen::MatrixXd::Identity(p, p);
    for (int l = depth - 1; l >= 0; --l)
        suffix[static_cast<std::size_t>(l)] =
            suffix[static_cast<std::size_t>(l + 1)] * student_weights[static_cast<std::size_t>(l)];

    double kappa1_prod = 1.0;
    for (const auto& k : student_kappas) kappa1_prod *= k.kappa1;

    EffectiveLinearNet net;
    net.w_eff = kappa1_prod * suffix[0];
    net.c_eff = Eigen::MatrixXd::Zero(p, p);
    // Fixed summation order (ascending l) keeps the accumulation
    // thread-count independent.
    for (int l = 0; l + 1 < depth; ++l) {
        double tail = 1.0;
        for (int s = l + 1; s < depth; ++s)
            tail *= student_kappas[static_cast<std::size_t>(s)].kappa1;
        const double coeff = student_kappas[static_cast<std::size_t>(l)].kappa_star_sq * tail * tail;
        if (coeff == 0.0) continue;
        const Eigen::MatrixXd& s = suffix[static_cast<std::size_t>(l + 1)];
        net.c_eff += coeff * (s * s.transpose());
    }
    net.c_eff.diagonal().array() += student_kappas.back().kappa_star_sq;
    net.c_eff = 0.5 * (net.c_eff + net.c_eff.transpose());
    return net;
}

}  // namespace rainbow
