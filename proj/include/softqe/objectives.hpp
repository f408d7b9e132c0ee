#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"

namespace softqe {

/// alpha weighs representation distillation against the rest of the
/// objective; beta weighs the cross-encoder KL term against contrastive loss.
struct LossWeights {
    double alpha = 0.0;
    double beta = 0.0;
    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

/// Per-epoch loss weights. The step-function form holds `alpha_warm` for the
/// first `warmup_epochs` epochs and `alpha_after` afterwards.
struct LossSchedule {
    std::vector<LossWeights> per_epoch;
    std::size_t warmup_epochs = 0;
    double alpha_warm = 1.0;
    double alpha_after = 0.2;

    static LossSchedule step(std::size_t epochs, std::size_t warmup_epochs, double alpha_warm,
                             double alpha_after, double beta = 0.0);
    static LossSchedule constant(std::size_t epochs, double alpha, double beta = 0.0);
    std::size_t epochs() const { return per_epoch.size(); }
    void validate() const;
    bool operator==(const LossSchedule&) const = default;
};

double alpha_at_epoch(const LossSchedule& schedule, std::size_t epoch);

/// A query embedding scored against one positive and N negatives. Scores
/// are plain inner products.
struct CandidateSet {
    std::vector<double> query;
    std::vector<double> positive;
    std::vector<std::vector<double>> negatives;

    std::size_t size() const { return 1 + negatives.size(); }
    /// Candidate i: 0 is the positive, i >= 1 is negatives[i - 1].
    const std::vector<double>& candidate(std::size_t i) const
    {
        return i == 0 ? positive : negatives[i - 1];
    }
    void validate() const;
    /// [q.p+, q.p-_1, ..., q.p-_N]
    std::vector<double> scores() const;
};

struct CandidateGrads {
    std::vector<double> query;
    std::vector<double> positive;
    std::vector<std::vector<double>> negatives;

    static CandidateGrads zeros_like(const CandidateSet& c);
    std::vector<double>& candidate(std::size_t i) { return i == 0 ? positive : negatives[i - 1]; }
};

/// Loss value, its components and gradients w.r.t. every embedding.
struct LossResult {
    double total = 0.0;
    double contrastive = 0.0;
    double distillation = 0.0;
    double kl = 0.0;
    CandidateGrads grads;
};

double log_sum_exp(std::span<const double> x);
std::vector<double> softmax(std::span<const double> x);

/// -log softmax(scores)[0].
LossResult contrastive_loss(const CandidateSet& cands);

struct DistillationResult {
    double loss = 0.0;
    std::vector<double> grad;  // w.r.t. the student
};

/// Mean squared error over dimensions; the target is a constant.
DistillationResult distillation_loss(std::span<const double> student,
                                     std::span<const double> target);

/// alpha * MSE(query, target) + (1 - alpha) * contrastive. `cands.query` is
/// the student embedding; both terms' gradients land in `grads.query`.
LossResult softqe_loss(const LossWeights& weights, const CandidateSet& cands,
                       std::span<const double> target);

enum class KlDirection {
    /// KL(cross-encoder || student): soft-label distillation.
    teacher_to_student,
    /// KL(student || cross-encoder).
    student_to_teacher,
};

std::string to_string(KlDirection d);
KlDirection parse_kl_direction(const std::string& s);

double kl_divergence(std::span<const double> p, std::span<const double> q);

/// alpha * MSE + (1 - alpha) * [beta * KL + (1 - beta) * contrastive], the KL
/// taken between `ce_probs` and the softmax over candidate scores. `ce_probs`
/// is ordered [positive, negatives...].
LossResult kd_composite_loss(const LossWeights& weights, const CandidateSet& cands,
                             std::span<const double> target, std::span<const double> ce_probs,
                             KlDirection direction = KlDirection::teacher_to_student);

struct ScoreKdResult {
    double loss = 0.0;
    std::vector<double> grad;  // w.r.t. student scores
};

/// Mean squared error between student and teacher candidate scores.
ScoreKdResult score_only_kd_loss(std::span<const double> student_scores,
                                 std::span<const double> teacher_scores);

/// alpha * score-MSE + (1 - alpha) * contrastive, with gradients pushed through
/// the dot products onto the embeddings. The score-MSE is reported in the
/// `distillation` slot.
LossResult score_only_kd_objective(const LossWeights& weights, const CandidateSet& cands,
                                   std::span<const double> teacher_scores);

/// Desk-scale stand-in for a cross-encoder: a joint (query, passage) scorer
/// producing a distribution over a candidate list.
///
/// oracle: softmax((grade + N(0, noise_sd)) / temperature), grade taken from
///         the qrels.
/// learned_stub: softmax(2 * overlap / temperature), overlap being the
///         fraction of distinct query terms present in the passage.
struct CrossEncoderScorer {
    enum class Mode { oracle, learned_stub };
    Mode mode = Mode::oracle;
    double temperature = 1.0;
    double noise_sd = 0.0;
    std::uint64_t seed = 0;
    void validate() const;
    bool operator==(const CrossEncoderScorer&) const = default;
};

std::string to_string(CrossEncoderScorer::Mode m);
CrossEncoderScorer::Mode parse_scorer_mode(const std::string& s);

std::vector<double> cross_encoder_scores(const CrossEncoderScorer& scorer,
                                         const std::string& query_id,
                                         std::span<const std::size_t> doc_positions,
                                         const Corpus& corpus);
std::vector<double> cross_encoder_scores(const CrossEncoderScorer& scorer,
                                         const std::string& query_id,
                                         const std::vector<std::string>& doc_ids,
                                         const Corpus& corpus);

}  // namespace softqe
