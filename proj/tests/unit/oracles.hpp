#pragma once

// Reference computations shared by the unit tests and the acceptance binary.
// Each returns the worst deviation it saw, so callers pick the tolerance.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "softqe/encoder.hpp"
#include "softqe/eval.hpp"
#include "softqe/objectives.hpp"
#include "util.hpp"

namespace oracles {

using namespace softqe;

// --- gradients ------------------------------------------------------------

inline std::vector<double> flatten(EncoderParams& p)
{
    std::vector<double> out;
    auto g = GradientSet::zeros_like(p);
    for_each_tensor(p, g, [&](std::span<double> v, std::span<double>) { out.insert(out.end(), v.begin(), v.end()); });
    return out;
}

inline void unflatten(EncoderParams& p, const std::vector<double>& flat)
{
    std::size_t k = 0;
    auto g = GradientSet::zeros_like(p);
    for_each_tensor(p, g, [&](std::span<double> v, std::span<double>) {
        for (auto& x : v) x = flat[k++];
    });
}

inline std::vector<double> flatten(GradientSet& g, EncoderParams& shape)
{
    std::vector<double> out;
    for_each_tensor(shape, g, [&](std::span<double>, std::span<double> v) { out.insert(out.end(), v.begin(), v.end()); });
    return out;
}

/// Worst relative error of encode_backward over `instances` random encoders,
/// half of them normalized, with non-zero biases.
inline double encoder_gradient_error(std::uint64_t seed, int instances = 50)
{
    const EncoderDims dims{30, 7, 6, 5};
    std::mt19937_64 gen(seed);
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        EncoderParams p = init_params(100 + inst, dims, inst % 2 == 1, Role::query);
        for (auto& b : p.proj1_bias) b = std::normal_distribution<double>(0, 0.3)(gen);
        for (auto& b : p.proj2_bias) b = std::normal_distribution<double>(0, 0.3)(gen);
        std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(dims.vocab_size - 1));
        std::vector<TokenId> tokens(1 + inst % 6);
        for (auto& t : tokens) t = tok(gen);
        const auto upstream = testutil::random_vector(gen, dims.d_out);

        GradientSet g = encode_backward(p, tokens, upstream);
        const auto analytic = flatten(g, p);
        const auto numeric = testutil::central_differences(flatten(p), [&](const std::vector<double>& x) {
            EncoderParams q = p;
            unflatten(q, x);
            return dot(encode(q, tokens).values, upstream);
        });
        worst = std::max(worst, testutil::relative_error(analytic, numeric));
    }
    return worst;
}

inline CandidateSet random_cands(std::mt19937_64& gen, std::size_t dim, std::size_t negatives)
{
    CandidateSet c;
    c.query = testutil::random_vector(gen, dim, 0.7);
    c.positive = testutil::random_vector(gen, dim, 0.7);
    for (std::size_t i = 0; i < negatives; ++i) c.negatives.push_back(testutil::random_vector(gen, dim, 0.7));
    return c;
}

inline std::vector<double> flatten(const CandidateSet& c)
{
    std::vector<double> out(c.query);
    out.insert(out.end(), c.positive.begin(), c.positive.end());
    for (const auto& n : c.negatives) out.insert(out.end(), n.begin(), n.end());
    return out;
}

inline std::vector<double> flatten(const CandidateGrads& g)
{
    std::vector<double> out(g.query);
    out.insert(out.end(), g.positive.begin(), g.positive.end());
    for (const auto& n : g.negatives) out.insert(out.end(), n.begin(), n.end());
    return out;
}

inline CandidateSet unflatten(const CandidateSet& shape, const std::vector<double>& x)
{
    CandidateSet c = shape;
    std::size_t k = 0;
    for (auto& v : c.query) v = x[k++];
    for (auto& v : c.positive) v = x[k++];
    for (auto& n : c.negatives)
        for (auto& v : n) v = x[k++];
    return c;
}

inline LossWeights weights_for(int inst)
{
    const double alpha[] = {0.0, 0.2, 0.5, 1.0, 0.8};
    const double beta[] = {0.0, 0.2, 0.7, 1.0};
    return {alpha[inst % 5], beta[inst % 4]};
}

/// Worst relative gradient error of `loss(cands, target, aux, inst)` over 50
/// random candidate sets of varying width and depth.
template <class F>
double candidate_gradient_error(std::uint64_t seed, F&& loss)
{
    std::mt19937_64 gen(seed);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t dim = 3 + inst % 5;
        const CandidateSet c = random_cands(gen, dim, 1 + inst % 7);
        const auto target = testutil::random_vector(gen, dim, 0.7);
        const auto aux = testutil::random_vector(gen, c.size(), 1.0);
        const LossResult r = loss(c, target, aux, inst);
        const auto numeric = testutil::central_differences(flatten(c), [&](const std::vector<double>& x) {
            return loss(unflatten(c, x), target, aux, inst).total;
        });
        worst = std::max(worst, testutil::relative_error(flatten(r.grads), numeric));
    }
    return worst;
}

/// Worst relative error of a vector-to-scalar loss `f(s, t)` returning
/// {loss, grad}, over 50 random pairs.
template <class F>
double vector_gradient_error(std::uint64_t seed, F&& f)
{
    std::mt19937_64 gen(seed);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const auto s = testutil::random_vector(gen, 2 + inst % 9);
        const auto t = testutil::random_vector(gen, s.size());
        const auto r = f(s, t);
        const auto numeric =
            testutil::central_differences(s, [&](const std::vector<double>& x) { return f(x, t).loss; });
        worst = std::max(worst, testutil::relative_error(r.grad, numeric));
    }
    return worst;
}

inline double contrastive_gradient_error()
{
    return candidate_gradient_error(1, [](const CandidateSet& c, auto&, auto&, int) { return contrastive_loss(c); });
}

inline double distillation_gradient_error()
{
    return vector_gradient_error(2, [](const std::vector<double>& s, const std::vector<double>& t) {
        return distillation_loss(s, t);
    });
}

inline double softqe_gradient_error()
{
    return candidate_gradient_error(3, [](const CandidateSet& c, const std::vector<double>& t, auto&, int inst) {
        return softqe_loss(weights_for(inst), c, t);
    });
}

inline double kd_composite_gradient_error()
{
    double worst = 0.0;
    for (KlDirection dir : {KlDirection::teacher_to_student, KlDirection::student_to_teacher}) {
        worst = std::max(worst, candidate_gradient_error(4, [dir](const CandidateSet& c, const std::vector<double>& t,
                                                                  const std::vector<double>& aux, int inst) {
                             return kd_composite_loss(weights_for(inst), c, t, softmax(aux), dir);
                         }));
    }
    return worst;
}

inline double score_only_kd_gradient_error()
{
    const double objective =
        candidate_gradient_error(5, [](const CandidateSet& c, auto&, const std::vector<double>& aux, int inst) {
            return score_only_kd_objective(weights_for(inst), c, aux);
        });
    const double scores = vector_gradient_error(6, [](const std::vector<double>& s, const std::vector<double>& t) {
        return score_only_kd_loss(s, t);
    });
    return std::max(objective, scores);
}

// --- loss identities ------------------------------------------------------

/// |contrastive - ln(N + 1)| for a zero query, N in {1, 3, 7}.
inline double uniform_contrastive_error()
{
    double worst = 0.0;
    for (std::size_t n : {1U, 3U, 7U}) {
        CandidateSet c;
        c.query = {0.0, 0.0, 0.0};
        c.positive = {0.3, -1.0, 2.0};
        for (std::size_t i = 0; i < n; ++i) c.negatives.push_back({1.0 * static_cast<double>(i), 2.0, -0.5});
        worst = std::max(worst, std::fabs(contrastive_loss(c).total - std::log(static_cast<double>(n + 1))));
    }
    return worst;
}

/// Deviation of softqe_loss from its components at alpha 0, 1 and 0.3.
inline double softqe_collapse_error()
{
    std::mt19937_64 gen(8);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const CandidateSet c = random_cands(gen, 6, 4);
        const auto t = testutil::random_vector(gen, 6);
        const double cont = contrastive_loss(c).total;
        const double dist = distillation_loss(c.query, t).loss;
        const auto mid = softqe_loss({0.3, 0.0}, c, t);
        for (double e : {softqe_loss({0.0, 0.0}, c, t).total - cont, softqe_loss({1.0, 0.0}, c, t).total - dist,
                         mid.total - (0.3 * dist + 0.7 * cont), mid.contrastive - cont, mid.distillation - dist})
            worst = std::max(worst, std::fabs(e));
    }
    return worst;
}

/// Largest |KL| when the student distribution equals the soft labels.
inline double matched_kl_error()
{
    std::mt19937_64 gen(9);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const CandidateSet c = random_cands(gen, 5, 3);
        const auto t = testutil::random_vector(gen, 5);
        const auto probs = softmax(c.scores());
        for (KlDirection dir : {KlDirection::teacher_to_student, KlDirection::student_to_teacher})
            worst = std::max(worst, std::fabs(kd_composite_loss({0.2, 0.5}, c, t, probs, dir).kl));
        worst = std::max(worst, std::fabs(kl_divergence(probs, probs)));
    }
    return worst;
}

// --- metrics --------------------------------------------------------------

inline Ranking ranking_of(const std::vector<std::string>& ids)
{
    Ranking r;
    for (std::size_t i = 0; i < ids.size(); ++i) r.docs.push_back({ids[i], 1.0 - 0.01 * static_cast<double>(i)});
    return r;
}

inline double ref_mrr(const std::vector<std::string>& ranked, const std::map<std::string, int>& g, std::size_t k)
{
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i)
        if (g.contains(ranked[i]) && g.at(ranked[i]) >= 1) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double ref_recall(const std::vector<std::string>& ranked, const std::map<std::string, int>& g, std::size_t k)
{
    std::set<std::string> rel, top;
    for (const auto& [d, r] : g)
        if (r >= 1) rel.insert(d);
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) top.insert(ranked[i]);
    std::vector<std::string> both;
    std::set_intersection(rel.begin(), rel.end(), top.begin(), top.end(), std::back_inserter(both));
    return static_cast<double>(both.size()) / static_cast<double>(rel.size());
}

inline double ref_ndcg(const std::vector<std::string>& ranked, const std::map<std::string, int>& g, std::size_t k)
{
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
        const int rel = g.contains(ranked[i]) ? std::max(0, g.at(ranked[i])) : 0;
        dcg += rel / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<int> grades;
    for (const auto& [d, r] : g)
        if (r >= 1) grades.push_back(r);
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < k; ++i) idcg += grades[i] / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

/// Worst metric deviation from the brute-force references over 200 random
/// rankings with graded judgments.
inline double metric_error(std::uint64_t seed = 3)
{
    std::mt19937_64 gen(seed);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        std::vector<std::string> pool;
        for (int d = 0; d < 40; ++d) pool.push_back("d" + std::to_string(d));
        std::shuffle(pool.begin(), pool.end(), gen);
        const std::size_t depth = 5 + gen() % 35;
        std::vector<std::string> ranked(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(depth));
        std::map<std::string, int> grades;
        std::vector<Judgment> qrels;
        const int nrel = 1 + static_cast<int>(gen() % 6);
        std::shuffle(pool.begin(), pool.end(), gen);
        for (int r = 0; r < nrel; ++r) {
            const int g = 1 + static_cast<int>(gen() % 3);
            grades[pool[r]] = g;
            qrels.push_back({pool[r], g});
        }
        const Ranking rk = ranking_of(ranked);
        worst = std::max(worst, std::fabs(mrr_at_k(rk, qrels, 10) - ref_mrr(ranked, grades, 10)));
        for (std::size_t k : {1U, 5U, 20U, 50U})
            worst = std::max(worst, std::fabs(recall_at_k(rk, qrels, k) - ref_recall(ranked, grades, k)));
        worst = std::max(worst, std::fabs(ndcg_at_k(rk, qrels, 10) - ref_ndcg(ranked, grades, 10)));
    }
    return worst;
}

/// Two-sided p from the Student t density integrated with composite Simpson's rule.
inline double ref_t_two_sided(double t, double dof)
{
    const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * M_PI);
    auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / dof, -(dof + 1) / 2); };
    const double a = std::fabs(t);
    const int n = 20000;
    const double h = a / n;
    double s = pdf(0.0) + pdf(a);
    for (int i = 1; i < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * pdf(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

/// Worst paired t-test p-value deviation from the integration reference.
inline double ttest_error(std::uint64_t seed = 4)
{
    std::mt19937_64 gen(seed);
    double worst = 0.0;
    for (int i = 0; i < 40; ++i) {
        const std::size_t n = 3 + gen() % 60;
        auto a = testutil::random_vector(gen, n);
        auto b = testutil::random_vector(gen, n);
        for (auto& x : a) x += 0.3;
        const TTestResult r = paired_t_test(a, b);
        if (r.dof != n - 1) return INFINITY;
        worst = std::max(worst, std::fabs(r.p - ref_t_two_sided(r.t, static_cast<double>(r.dof))));
    }
    return worst;
}

}  // namespace oracles
