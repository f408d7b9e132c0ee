#include "softqe/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/rng.hpp"

namespace softqe {

void LossWeights::validate() const
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
}

LossSchedule LossSchedule::step(std::size_t epochs, std::size_t warmup_epochs, double alpha_warm,
                                double alpha_after, double beta)
{
    LossSchedule s;
    s.warmup_epochs = warmup_epochs;
    s.alpha_warm = alpha_warm;
    s.alpha_after = alpha_after;
    for (std::size_t e = 0; e < epochs; ++e)
        s.per_epoch.push_back({e < warmup_epochs ? alpha_warm : alpha_after, beta});
    s.validate();
    return s;
}

LossSchedule LossSchedule::constant(std::size_t epochs, double alpha, double beta)
{
    return step(epochs, 0, alpha, alpha, beta);
}

void LossSchedule::validate() const
{
    if (per_epoch.empty()) throw ConfigError("loss schedule must cover at least one epoch");
    for (const auto& w : per_epoch) w.validate();
}

double alpha_at_epoch(const LossSchedule& schedule, std::size_t epoch)
{
    if (epoch >= schedule.epochs())
        throw InputError("alpha_at_epoch: epoch " + std::to_string(epoch) + " outside schedule of " +
                         std::to_string(schedule.epochs()) + " epochs");
    return schedule.per_epoch[epoch].alpha;
}

void CandidateSet::validate() const
{
    const std::size_t d = query.size();
    if (d == 0) throw InputError("candidate set: empty query embedding");
    if (positive.size() != d) throw InputError("candidate set: positive dimension mismatch");
    for (const auto& n : negatives) {
        if (n.size() != d) throw InputError("candidate set: negative dimension mismatch");
    }
}

std::vector<double> CandidateSet::scores() const
{
    std::vector<double> s(size());
    for (std::size_t i = 0; i < size(); ++i) {
        const auto& c = candidate(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < query.size(); ++k) acc += query[k] * c[k];
        s[i] = acc;
    }
    return s;
}

CandidateGrads CandidateGrads::zeros_like(const CandidateSet& c)
{
    CandidateGrads g;
    g.query.assign(c.query.size(), 0.0);
    g.positive.assign(c.positive.size(), 0.0);
    g.negatives.assign(c.negatives.size(), std::vector<double>(c.query.size(), 0.0));
    return g;
}

double log_sum_exp(std::span<const double> x)
{
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> x)
{
    const double lse = log_sum_exp(x);
    std::vector<double> p(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::exp(x[i] - lse);
    return p;
}

namespace {

// Given dL/ds_i for s_i = q . c_i, accumulate dL/dq and dL/dc_i.
void push_score_grads(const CandidateSet& cands, std::span<const double> g_scores,
                      CandidateGrads& g)
{
    const std::size_t d = cands.query.size();
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto& c = cands.candidate(i);
        auto& gc = g.candidate(i);
        for (std::size_t k = 0; k < d; ++k) {
            g.query[k] += g_scores[i] * c[k];
            gc[k] += g_scores[i] * cands.query[k];
        }
    }
}

void check_target(const CandidateSet& cands, std::span<const double> target)
{
    if (target.size() != cands.query.size())
        throw InputError("target dimension " + std::to_string(target.size()) +
                         " does not match query dimension " + std::to_string(cands.query.size()));
}

}  // namespace

LossResult contrastive_loss(const CandidateSet& cands)
{
    cands.validate();
    const auto s = cands.scores();
    const double lse = log_sum_exp(s);
    LossResult r;
    r.contrastive = lse - s[0];
    r.total = r.contrastive;
    std::vector<double> g = softmax(s);
    g[0] -= 1.0;
    r.grads = CandidateGrads::zeros_like(cands);
    push_score_grads(cands, g, r.grads);
    return r;
}

DistillationResult distillation_loss(std::span<const double> student, std::span<const double> target)
{
    if (student.size() != target.size())
        throw InputError("distillation_loss: dimension mismatch (" + std::to_string(student.size()) +
                         " vs " + std::to_string(target.size()) + ")");
    if (student.empty()) throw InputError("distillation_loss: empty embeddings");
    const auto d = static_cast<double>(student.size());
    DistillationResult r;
    r.grad.resize(student.size());
    double s = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double diff = student[i] - target[i];
        s += diff * diff;
        r.grad[i] = 2.0 * diff / d;
    }
    r.loss = s / d;
    return r;
}

LossResult softqe_loss(const LossWeights& weights, const CandidateSet& cands,
                       std::span<const double> target)
{
    weights.validate();
    cands.validate();
    check_target(cands, target);
    const double a = weights.alpha;
    const auto s = cands.scores();
    const auto dist = distillation_loss(cands.query, target);

    LossResult r;
    r.contrastive = log_sum_exp(s) - s[0];
    r.distillation = dist.loss;
    r.total = a * r.distillation + (1.0 - a) * r.contrastive;

    std::vector<double> g = softmax(s);
    g[0] -= 1.0;
    for (double& x : g) x *= (1.0 - a);
    r.grads = CandidateGrads::zeros_like(cands);
    push_score_grads(cands, g, r.grads);
    for (std::size_t k = 0; k < dist.grad.size(); ++k) r.grads.query[k] += a * dist.grad[k];
    return r;
}

std::string to_string(KlDirection d)
{
    return d == KlDirection::teacher_to_student ? "teacher_to_student" : "student_to_teacher";
}

KlDirection parse_kl_direction(const std::string& s)
{
    if (s == "teacher_to_student") return KlDirection::teacher_to_student;
    if (s == "student_to_teacher") return KlDirection::student_to_teacher;
    throw InputError("unknown KL direction '" + s + "'");
}

double kl_divergence(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size()) throw InputError("kl_divergence: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        s += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return s;
}

LossResult kd_composite_loss(const LossWeights& weights, const CandidateSet& cands,
                             std::span<const double> target, std::span<const double> ce_probs,
                             KlDirection direction)
{
    weights.validate();
    cands.validate();
    check_target(cands, target);
    if (ce_probs.size() != cands.size())
        throw InputError("kd_composite_loss: " + std::to_string(ce_probs.size()) +
                         " cross-encoder probabilities for " + std::to_string(cands.size()) +
                         " candidates");
    const double a = weights.alpha;
    const double b = weights.beta;
    const auto s = cands.scores();
    const double lse = log_sum_exp(s);
    const auto pi = softmax(s);
    const auto dist = distillation_loss(cands.query, target);

    std::vector<double> log_pi(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) log_pi[i] = s[i] - lse;

    // dKL/ds per direction.
    std::vector<double> g_kl(s.size(), 0.0);
    double kl = 0.0;
    if (direction == KlDirection::teacher_to_student) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (ce_probs[i] > 0.0) kl += ce_probs[i] * (std::log(ce_probs[i]) - log_pi[i]);
            g_kl[i] = pi[i] - ce_probs[i];
        }
    } else {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!(ce_probs[i] > 0.0))
                throw InputError("kd_composite_loss: student_to_teacher KL needs strictly positive "
                                 "cross-encoder probabilities");
            kl += pi[i] * (log_pi[i] - std::log(ce_probs[i]));
        }
        for (std::size_t i = 0; i < s.size(); ++i)
            g_kl[i] = pi[i] * (log_pi[i] - std::log(ce_probs[i]) - kl);
    }

    LossResult r;
    r.contrastive = lse - s[0];
    r.distillation = dist.loss;
    r.kl = kl;
    r.total = a * r.distillation + (1.0 - a) * (b * r.kl + (1.0 - b) * r.contrastive);

    std::vector<double> g(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double g_cont = pi[i] - (i == 0 ? 1.0 : 0.0);
        g[i] = (1.0 - a) * (b * g_kl[i] + (1.0 - b) * g_cont);
    }
    r.grads = CandidateGrads::zeros_like(cands);
    push_score_grads(cands, g, r.grads);
    for (std::size_t k = 0; k < dist.grad.size(); ++k) r.grads.query[k] += a * dist.grad[k];
    return r;
}

ScoreKdResult score_only_kd_loss(std::span<const double> student_scores,
                                 std::span<const double> teacher_scores)
{
    if (student_scores.size() != teacher_scores.size())
        throw InputError("score_only_kd_loss: length mismatch (" +
                         std::to_string(student_scores.size()) + " vs " +
                         std::to_string(teacher_scores.size()) + ")");
    if (student_scores.empty()) throw InputError("score_only_kd_loss: empty score lists");
    auto d = distillation_loss(student_scores, teacher_scores);
    return {d.loss, std::move(d.grad)};
}

LossResult score_only_kd_objective(const LossWeights& weights, const CandidateSet& cands,
                                   std::span<const double> teacher_scores)
{
    weights.validate();
    cands.validate();
    const double a = weights.alpha;
    const auto s = cands.scores();
    const auto kd = score_only_kd_loss(s, teacher_scores);

    LossResult r;
    r.contrastive = log_sum_exp(s) - s[0];
    r.distillation = kd.loss;
    r.total = a * r.distillation + (1.0 - a) * r.contrastive;

    std::vector<double> g = softmax(s);
    g[0] -= 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (1.0 - a) * g[i] + a * kd.grad[i];
    r.grads = CandidateGrads::zeros_like(cands);
    push_score_grads(cands, g, r.grads);
    return r;
}

// ---------------------------------------------------------------------------
// Cross-encoder stand-in

void CrossEncoderScorer::validate() const
{
    if (!(temperature > 0.0)) throw ConfigError("cross-encoder temperature must be > 0");
    if (!(noise_sd >= 0.0)) throw ConfigError("cross-encoder noise_sd must be >= 0");
}

std::string to_string(CrossEncoderScorer::Mode m)
{
    return m == CrossEncoderScorer::Mode::oracle ? "oracle" : "learned_stub";
}

CrossEncoderScorer::Mode parse_scorer_mode(const std::string& s)
{
    if (s == "oracle") return CrossEncoderScorer::Mode::oracle;
    if (s == "learned_stub" || s == "learned-stub") return CrossEncoderScorer::Mode::learned_stub;
    throw InputError("unknown cross-encoder mode '" + s + "'");
}

std::vector<double> cross_encoder_scores(const CrossEncoderScorer& scorer,
                                         const std::string& query_id,
                                         std::span<const std::size_t> doc_positions,
                                         const Corpus& corpus)
{
    scorer.validate();
    if (doc_positions.size() < 2) throw InputError("cross_encoder_scores: need >= 2 candidates");
    const Query& q = corpus.query(query_id);
    std::vector<double> logits(doc_positions.size());
    if (scorer.mode == CrossEncoderScorer::Mode::oracle) {
        Rng rng = Rng(scorer.seed).split(stream::kCrossEncoder).split(fnv1a(query_id));
        for (std::size_t i = 0; i < doc_positions.size(); ++i) {
            const double noise = scorer.noise_sd > 0.0 ? scorer.noise_sd * rng.normal() : 0.0;
            logits[i] = (corpus.relevance(query_id, doc_positions[i]) + noise) / scorer.temperature;
        }
    } else {
        const std::unordered_set<TokenId> terms(q.tokens.begin(), q.tokens.end());
        for (std::size_t i = 0; i < doc_positions.size(); ++i) {
            const auto& doc = corpus.documents().at(doc_positions[i]).tokens;
            const std::unordered_set<TokenId> in_doc(doc.begin(), doc.end());
            std::size_t hit = 0;
            for (TokenId t : terms) hit += in_doc.contains(t) ? 1 : 0;
            const double overlap = static_cast<double>(hit) / static_cast<double>(terms.size());
            logits[i] = 2.0 * overlap / scorer.temperature;
        }
    }
    return softmax(logits);
}

std::vector<double> cross_encoder_scores(const CrossEncoderScorer& scorer,
                                         const std::string& query_id,
                                         const std::vector<std::string>& doc_ids,
                                         const Corpus& corpus)
{
    std::vector<std::size_t> pos;
    pos.reserve(doc_ids.size());
    for (const auto& id : doc_ids) pos.push_back(corpus.doc_position(id));
    return cross_encoder_scores(scorer, query_id, pos, corpus);
}

}  // namespace softqe
