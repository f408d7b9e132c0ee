#include "softqe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/rng.hpp"

namespace softqe {

std::string to_string(Objective o)
{
    switch (o) {
    case Objective::contrastive: return "contrastive";
    case Objective::softqe: return "softqe";
    case Objective::kd_composite: return "kd_composite";
    case Objective::score_only_kd: return "score_only_kd";
    }
    return "contrastive";
}

Objective parse_objective(const std::string& s)
{
    if (s == "contrastive") return Objective::contrastive;
    if (s == "softqe") return Objective::softqe;
    if (s == "kd_composite") return Objective::kd_composite;
    if (s == "score_only_kd") return Objective::score_only_kd;
    throw ConfigError("unknown objective '" + s + "'");
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s)
{
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}

LossSchedule default_schedule(std::size_t epochs)
{
    return LossSchedule::step(epochs, std::min<std::size_t>(3, epochs), 1.0, 0.2, 0.2);
}

void TrainConfig::validate() const
{
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("train config: learning_rate must be a finite value >= 0");
    if (negatives_per_query < 1) throw ConfigError("train config: negatives_per_query must be >= 1");
    if (schedule.epochs() != epochs)
        throw ConfigError("train config: schedule covers " + std::to_string(schedule.epochs()) +
                          " epochs but epochs = " + std::to_string(epochs));
    schedule.validate();
    if (dims.d_emb == 0 || dims.d_hidden == 0 || dims.d_out == 0)
        throw ConfigError("train config: encoder dimensions must be >= 1");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("train config: grad_clip_norm must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
        !(adam.epsilon > 0.0))
        throw ConfigError("train config: invalid Adam parameters");
    cross_encoder.validate();
}

TrainingSet build_training_set(const Corpus& corpus, std::size_t negatives_per_query, double k1,
                               double b, std::uint64_t seed)
{
    const auto train = corpus.queries_in(Split::train);
    if (train.empty()) throw IntegrityError("corpus has no training queries");
    const InvertedIndex index(corpus, k1, b);
    TrainingSet set;
    for (const Query* q : train) {
        auto mined = mine_hard_negatives(index, corpus, q->id, negatives_per_query, seed);
        set.padded_negatives += mined.padded;
        set.examples.push_back({q->id, corpus.gold_position(q->id), std::move(mined.docs)});
    }
    return set;
}

namespace {

class Optimizer {
  public:
    Optimizer(const TrainConfig& config, const EncoderParams& params) : m_config(config)
    {
        if (config.optimizer == OptimizerKind::adam) {
            m_m = GradientSet::zeros_like(params);
            m_v = GradientSet::zeros_like(params);
        }
    }

    /// Applies one step and returns the L2 norm of the parameter change.
    double step(EncoderParams& params, GradientSet& grads)
    {
        ++m_t;
        const double lr = m_config.learning_rate;
        double update_sq = 0.0;
        if (m_config.optimizer == OptimizerKind::sgd) {
            for_each_tensor(params, grads, [&](std::span<double> p, std::span<double> g) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double before = p[i];
                    p[i] -= lr * g[i];
                    update_sq += (p[i] - before) * (p[i] - before);
                }
            });
            return std::sqrt(update_sq);
        }
        const auto& a = m_config.adam;
        const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(m_t));
        const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(m_t));
        std::vector<std::span<double>> ms, vs;
        auto collect = [](GradientSet& s, std::vector<std::span<double>>& out) {
            out = {s.token_embeddings.data, s.proj1_weights.data, s.proj1_bias,
                   s.proj2_weights.data, s.proj2_bias};
        };
        collect(m_m, ms);
        collect(m_v, vs);
        std::size_t k = 0;
        for_each_tensor(params, grads, [&](std::span<double> p, std::span<double> g) {
            auto m = ms[k];
            auto v = vs[k];
            ++k;
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * g[i];
                v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * g[i] * g[i];
                const double delta = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + a.epsilon);
                const double before = p[i];
                p[i] -= delta;
                update_sq += (p[i] - before) * (p[i] - before);
            }
        });
        return std::sqrt(update_sq);
    }

  private:
    const TrainConfig& m_config;
    GradientSet m_m;
    GradientSet m_v;
    std::uint64_t m_t = 0;
};

/// Everything the generic loop needs to know about one lineage.
struct LineageSpec {
    std::string name;
    /// Query-side tokens for example i.
    std::function<std::span<const TokenId>(std::size_t)> query_input;
    /// Loss for example i (with this epoch's candidates) under the epoch's weights.
    std::function<LossResult(std::size_t, const TrainingExample&, const CandidateSet&,
                             const LossWeights&)>
        loss;
};

struct ForwardItem {
    CandidateSet cands;
    std::span<const TokenId> query_tokens;
};

ForwardItem forward_example(const Corpus& corpus, const TrainingExample& ex,
                            std::span<const TokenId> query_tokens, const EncoderParams& q,
                            const EncoderParams& p)
{
    ForwardItem f;
    f.query_tokens = query_tokens;
    f.cands.query = encode(q, query_tokens).values;
    f.cands.positive = encode(p, corpus.documents()[ex.positive].tokens).values;
    for (std::size_t d : ex.negatives)
        f.cands.negatives.push_back(encode(p, corpus.documents()[d].tokens).values);
    return f;
}

bool finite(const LossResult& r)
{
    return std::isfinite(r.total) && std::isfinite(r.contrastive) &&
           std::isfinite(r.distillation) && std::isfinite(r.kl);
}

void add_components(LossRecord& rec, const LossResult& r)
{
    rec.contrastive += r.contrastive;
    rec.distillation += r.distillation;
    rec.kl += r.kl;
    rec.total += r.total;
}

void divide(LossRecord& rec, double n)
{
    rec.contrastive /= n;
    rec.distillation /= n;
    rec.kl /= n;
    rec.total /= n;
}

/// The mined set plus `count` random negatives per query, drawn afresh every
/// epoch from the other training queries' positives (minus anything relevant
/// or already mined), so each positive also serves as a negative elsewhere.
std::vector<TrainingExample> epoch_examples(const Corpus& corpus, const TrainingSet& set,
                                            std::size_t count, std::uint64_t seed,
                                            std::size_t epoch)
{
    std::vector<TrainingExample> out = set.examples;
    if (count == 0) return out;
    std::vector<std::size_t> pool;
    for (const auto& ex : set.examples) pool.push_back(ex.positive);
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

    const Rng root = Rng(seed).split(stream::kRandomNegatives).split(epoch);
    for (auto& ex : out) {
        const auto rel = corpus.relevant_positions(ex.query_id);
        std::unordered_set<std::size_t> used(rel.begin(), rel.end());
        used.insert(ex.negatives.begin(), ex.negatives.end());
        std::size_t available = 0;
        for (std::size_t d : pool) available += used.contains(d) ? 0 : 1;
        if (available < count)
            throw InputError("only " + std::to_string(available) +
                             " candidate random negatives for query '" + ex.query_id + "', need " +
                             std::to_string(count));
        Rng rng = root.split(fnv1a(ex.query_id));
        for (std::size_t added = 0; added < count;) {
            const std::size_t d = pool[rng.below(pool.size())];
            if (!used.insert(d).second) continue;
            ex.negatives.push_back(d);
            ++added;
        }
    }
    return out;
}

TrainedModel run_training(const Corpus& corpus, const TrainConfig& config, const TrainingSet& set,
                          EncoderParams query_params, EncoderParams passage_params,
                          bool train_passages, const LineageSpec& lineage)
{
    const std::size_t n = set.examples.size();
    TrainedModel model;
    model.config = config;
    model.provenance.lineage = lineage.name;
    model.provenance.corpus_hash = corpus.content_hash();
    model.provenance.expansion_hash = corpus.expansion_hash();
    model.provenance.seed = config.seed;
    model.provenance.padded_negatives = set.padded_negatives;

    auto examples_at = [&](std::size_t epoch) {
        return epoch_examples(corpus, set, config.random_negatives_per_query, config.seed, epoch);
    };

    // Baseline measurement on epoch 0's candidates, no updates.
    {
        const LossWeights w0 = config.schedule.per_epoch.front();
        const auto examples = examples_at(0);
        for (std::size_t i = 0; i < n; ++i) {
            auto f = forward_example(corpus, examples[i], lineage.query_input(i), query_params,
                                     passage_params);
            add_components(model.initial, lineage.loss(i, examples[i], f.cands, w0));
        }
        divide(model.initial, static_cast<double>(n));
    }

    Optimizer q_opt(config, query_params);
    Optimizer p_opt(config, passage_params);
    GradientSet q_grads = GradientSet::zeros_like(query_params);
    GradientSet p_grads = train_passages ? GradientSet::zeros_like(passage_params) : GradientSet{};

    std::vector<std::size_t> order(n);
    const Rng shuffle_root = Rng(config.seed).split(stream::kShuffle);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const LossWeights w = config.schedule.per_epoch[epoch];
        const auto examples = examples_at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = shuffle_root.split(epoch);
        rng.shuffle(std::span<std::size_t>(order));

        LossRecord rec;
        double q_update_sq = 0.0;
        double p_update_sq = 0.0;
        for (std::size_t start = 0, batch = 0; start < n; start += config.batch_size, ++batch) {
            const std::size_t end = std::min(n, start + config.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            q_grads.set_zero();
            if (train_passages) p_grads.set_zero();

            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                const auto& ex = examples[i];
                auto f = forward_example(corpus, ex, lineage.query_input(i), query_params,
                                         passage_params);
                LossResult r = lineage.loss(i, ex, f.cands, w);
                if (!finite(r)) {
                    std::ostringstream msg;
                    msg << "non-finite loss in lineage " << lineage.name << " at epoch " << epoch
                        << ", batch " << batch << " (query " << ex.query_id
                        << "): total=" << r.total << " contrastive=" << r.contrastive
                        << " distillation=" << r.distillation << " kl=" << r.kl
                        << "; query grad norm so far=" << std::sqrt(q_grads.squared_norm())
                        << ", passage grad norm so far="
                        << (train_passages ? std::sqrt(p_grads.squared_norm()) : 0.0);
                    throw NumericalError(msg.str());
                }
                add_components(rec, r);
                accumulate_backward(query_params, f.query_tokens, r.grads.query, q_grads, scale);
                if (train_passages) {
                    accumulate_backward(passage_params, corpus.documents()[ex.positive].tokens,
                                        r.grads.positive, p_grads, scale);
                    for (std::size_t j = 0; j < ex.negatives.size(); ++j)
                        accumulate_backward(passage_params,
                                            corpus.documents()[ex.negatives[j]].tokens,
                                            r.grads.negatives[j], p_grads, scale);
                }
            }

            double norm_sq = q_grads.squared_norm() + (train_passages ? p_grads.squared_norm() : 0.0);
            if (!std::isfinite(norm_sq)) {
                std::ostringstream msg;
                msg << "non-finite gradient in lineage " << lineage.name << " at epoch " << epoch
                    << ", batch " << batch;
                throw NumericalError(msg.str());
            }
            const double norm = std::sqrt(norm_sq);
            if (norm > config.grad_clip_norm) {
                const double c = config.grad_clip_norm / norm;
                q_grads.scale(c);
                if (train_passages) p_grads.scale(c);
            }
            const double dq = q_opt.step(query_params, q_grads);
            q_update_sq += dq * dq;
            if (train_passages) {
                const double dp = p_opt.step(passage_params, p_grads);
                p_update_sq += dp * dp;
            }
        }
        divide(rec, static_cast<double>(n));
        rec.query_update_norm = std::sqrt(q_update_sq);
        rec.passage_update_norm = std::sqrt(p_update_sq);
        model.loss_history.push_back(rec);
    }
    model.query_params = std::move(query_params);
    model.passage_params = std::move(passage_params);
    return model;
}

EncoderDims dims_for(const Corpus& corpus, const TrainConfig& config)
{
    EncoderDims d = config.dims;
    d.vocab_size = corpus.layout().vocab_size;
    return d;
}

TrainedModel train_bi_encoder(const Corpus& corpus, const TrainConfig& config, bool expanded)
{
    config.validate();
    const auto set = build_training_set(corpus, config.negatives_per_query, config.bm25_k1,
                                        config.bm25_b, config.seed);
    std::vector<std::vector<TokenId>> inputs;
    for (const auto& ex : set.examples) {
        if (expanded) {
            if (corpus.expansion(ex.query_id) == nullptr)
                throw IntegrityError("train_q2d_teacher: no expansion for training query '" +
                                     ex.query_id + "'");
            inputs.push_back(corpus.expanded(ex.query_id).tokens);
        } else {
            inputs.push_back(corpus.query(ex.query_id).tokens);
        }
    }
    const auto dims = dims_for(corpus, config);
    const Rng root(config.seed);
    auto q = init_params(root.split(stream::kQueryEncoder).state(), dims, config.normalize_output,
                         expanded ? Role::teacher_query : Role::query);
    const std::uint64_t passage_stream =
        config.shared_initialization ? stream::kQueryEncoder : stream::kPassageEncoder;
    auto p = init_params(root.split(passage_stream).state(), dims, config.normalize_output,
                         Role::passage);
    LineageSpec lineage;
    lineage.name = expanded ? "q2d" : "dpr";
    lineage.query_input = [&](std::size_t i) { return std::span<const TokenId>(inputs[i]); };
    lineage.loss = [](std::size_t, const TrainingExample&, const CandidateSet& c,
                      const LossWeights&) { return contrastive_loss(c); };
    // The contrastive lineages always train both towers.
    return run_training(corpus, config, set, std::move(q), std::move(p), true, lineage);
}

void check_teacher(const TrainedModel& teacher, const Corpus& corpus)
{
    if (teacher.query_params.role != Role::teacher_query)
        throw IntegrityError("teacher query encoder is tagged '" +
                             to_string(teacher.query_params.role) + "', expected teacher_query");
    if (teacher.passage_params.role != Role::passage)
        throw IntegrityError("teacher passage encoder is tagged '" +
                             to_string(teacher.passage_params.role) + "', expected passage");
    if (teacher.query_params.dims().vocab_size != corpus.layout().vocab_size)
        throw IntegrityError("teacher vocabulary does not match the corpus");
}

EncoderParams student_init(const TrainedModel& teacher, const Corpus& corpus,
                           const TrainConfig& config)
{
    if (config.init_student_from_teacher) {
        EncoderParams p = teacher.query_params;
        p.role = Role::student_query;
        return p;
    }
    return init_params(Rng(config.seed).split(stream::kQueryEncoder).state(),
                       dims_for(corpus, config), config.normalize_output, Role::student_query);
}

std::vector<std::vector<TokenId>> raw_inputs(const Corpus& corpus, const TrainingSet& set)
{
    std::vector<std::vector<TokenId>> inputs;
    for (const auto& ex : set.examples) inputs.push_back(corpus.query(ex.query_id).tokens);
    return inputs;
}

}  // namespace

TrainedModel train_dpr(const Corpus& corpus, const TrainConfig& config)
{
    return train_bi_encoder(corpus, config, false);
}

TrainedModel train_q2d_teacher(const Corpus& corpus, const TrainConfig& config)
{
    return train_bi_encoder(corpus, config, true);
}

TrainedModel train_softqe_student(const Corpus& corpus, const TrainedModel& teacher,
                                  const TrainConfig& config, const std::optional<TargetSet>& targets)
{
    config.validate();
    if (config.objective != Objective::softqe && config.objective != Objective::kd_composite)
        throw ConfigError("train_softqe_student: objective must be softqe or kd_composite");
    check_teacher(teacher, corpus);
    const TargetSet target_set = targets ? *targets : precompute_teacher_targets(teacher, corpus);

    const auto set = build_training_set(corpus, config.negatives_per_query, config.bm25_k1,
                                        config.bm25_b, config.seed);
    const auto inputs = raw_inputs(corpus, set);
    std::vector<const std::vector<double>*> target_of;
    for (const auto& ex : set.examples) {
        auto it = target_set.targets.find(ex.query_id);
        if (it == target_set.targets.end())
            throw IntegrityError("no teacher target for training query '" + ex.query_id + "'");
        target_of.push_back(&it->second.values);
    }

    EncoderParams passages = teacher.passage_params;
    LineageSpec lineage;
    lineage.name = config.objective == Objective::kd_composite ? "softqe_kd" : "softqe";
    if (!config.freeze_passage_encoder) lineage.name += "_unfrozen";
    lineage.query_input = [&](std::size_t i) { return std::span<const TokenId>(inputs[i]); };
    if (config.objective == Objective::kd_composite) {
        lineage.loss = [&](std::size_t i, const TrainingExample& ex, const CandidateSet& c,
                           const LossWeights& w) {
            std::vector<std::size_t> cand{ex.positive};
            cand.insert(cand.end(), ex.negatives.begin(), ex.negatives.end());
            const auto ce = cross_encoder_scores(config.cross_encoder, ex.query_id, cand, corpus);
            return kd_composite_loss(w, c, *target_of[i], ce, config.kl_direction);
        };
    } else {
        lineage.loss = [&](std::size_t i, const TrainingExample&, const CandidateSet& c,
                           const LossWeights& w) { return softqe_loss(w, c, *target_of[i]); };
    }
    auto model = run_training(corpus, config, set, student_init(teacher, corpus, config),
                              std::move(passages), !config.freeze_passage_encoder, lineage);
    model.provenance.teacher_checksum = checksum(teacher.query_params);
    model.provenance.targets_from_cache = target_set.from_cache;
    return model;
}

TrainedModel train_score_only_kd(const Corpus& corpus, const TrainedModel& teacher,
                                 const TrainConfig& config)
{
    config.validate();
    check_teacher(teacher, corpus);
    const auto set = build_training_set(corpus, config.negatives_per_query, config.bm25_k1,
                                        config.bm25_b, config.seed);
    const auto inputs = raw_inputs(corpus, set);

    // Teacher side, fixed for the whole run: q+ embeddings and every passage.
    std::vector<std::vector<double>> teacher_queries;
    for (const auto& ex : set.examples) {
        if (corpus.expansion(ex.query_id) == nullptr)
            throw IntegrityError("train_score_only_kd: no expansion for training query '" +
                                 ex.query_id + "'");
        teacher_queries.push_back(
            encode(teacher.query_params, corpus.expanded(ex.query_id).tokens).values);
    }
    std::vector<std::vector<double>> teacher_passages;
    for (const auto& d : corpus.documents())
        teacher_passages.push_back(encode(teacher.passage_params, d.tokens).values);

    LineageSpec lineage;
    lineage.name = "score_only_kd";
    lineage.query_input = [&](std::size_t i) { return std::span<const TokenId>(inputs[i]); };
    lineage.loss = [&](std::size_t i, const TrainingExample& ex, const CandidateSet& c,
                       const LossWeights& w) {
        std::vector<double> ts{dot(teacher_queries[i], teacher_passages[ex.positive])};
        for (std::size_t d : ex.negatives) ts.push_back(dot(teacher_queries[i], teacher_passages[d]));
        return score_only_kd_objective(w, c, ts);
    };
    TrainConfig cfg = config;
    cfg.objective = Objective::score_only_kd;
    auto model = run_training(corpus, cfg, set, student_init(teacher, corpus, config),
                              teacher.passage_params, !config.freeze_passage_encoder, lineage);
    model.provenance.teacher_checksum = checksum(teacher.query_params);
    return model;
}

void save_model_checkpoint(const TrainedModel& model, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SerializationError("cannot write " + path.string());
    write_params(out, model.query_params);
    write_params(out, model.passage_params);
    if (!out) throw SerializationError("write failed for " + path.string());
}

std::pair<EncoderParams, EncoderParams> load_model_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SerializationError("cannot open " + path.string());
    auto q = read_params(in);
    auto p = read_params(in);
    return {std::move(q), std::move(p)};
}

}  // namespace softqe
