#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qadapt/adapter_heads.hpp"
#include "qadapt/embedding_store.hpp"
#include "qadapt/relevance.hpp"

namespace qadapt {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    double temperature = 0.1;
    double lr = 5e-6;
    std::size_t total_steps = 1000;
    std::size_t batch_size = 32;
    std::size_t negatives_mined = 16;
    std::size_t negatives_sampled = 8;
    std::size_t refresh_interval = 200;
    std::uint64_t seed = 0;
    AdamWConfig adamw;
    std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

    /// ContractError naming the first violated constraint.
    void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
void apply_train_setting(TrainConfig& config, const std::string& key, const std::string& value);
std::string format_train_config(const TrainConfig& config);

/// query id -> mined negative chunk ids, best first.
using NegativePool = std::map<std::string, std::vector<std::string>>;

struct InfoNceResult {
    double loss = 0.0;
    Vec grad;  // d loss / d query
};

/// -log softmax of the positive among {positive} ∪ negatives, logits = dot / tau.
InfoNceResult infonce_loss(std::span<const double> query, std::span<const double> positive,
                           const std::vector<std::span<const double>>& negatives, double tau);

/// InfoNCE on y / |y|; `grad` is taken with respect to the unnormalized y.
InfoNceResult normalized_infonce(std::span<const double> y, std::span<const double> positive,
                                 const std::vector<std::span<const double>>& negatives, double tau);

/// Cosine decay without warm-up: lr * 0.5 * (1 + cos(pi * step / total)).
double lr_at(std::size_t step, std::size_t total_steps, double lr);

/// For every query row, ranks the store with the head-transformed query and
/// keeps the first `mined` chunks that are not labeled positives.
NegativePool mine_negatives(const AdapterHead* head, const EmbeddingMatrix& query_embs,
                            const EmbeddingMatrix& doc_store, const RelevanceLabels& qrels,
                            std::size_t mined);

/// Decoupled-weight-decay Adam over a head's parameter tensors. Moments are
/// kept in double.
class AdamW {
public:
    AdamW() = default;
    AdamW(const AdamWConfig& config, const AdapterHead& head);

    /// Replaces the hyperparameters, keeping moments (allocating them if
    /// this optimizer was default-constructed).
    void configure(const AdamWConfig& config, const AdapterHead& head);

    /// One update with learning rate `lr`; `grads` parallel to head_parameters.
    void step(AdapterHead& head, const std::vector<Vec>& grads, double lr);

    std::size_t steps_taken() const noexcept { return t_; }

    const std::vector<Vec>& first_moment() const noexcept { return m_; }
    const std::vector<Vec>& second_moment() const noexcept { return v_; }
    void restore(std::size_t t, std::vector<Vec> m, std::vector<Vec> v);

private:
    AdamWConfig config_;
    std::size_t t_ = 0;
    std::vector<Vec> m_;
    std::vector<Vec> v_;
};

struct MetricPoint {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_ndcg10 = 0.0;
};

struct TrainingPair {
    std::size_t query_row;
    std::size_t doc_row;

    friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct TrainState {
    std::size_t step = 0;
    AdapterHead head;
    AdamW optimizer;
    std::string rng_state;
    NegativePool negatives;
    std::vector<TrainingPair> epoch;  // current shuffled order
    std::size_t cursor = 0;           // next pair in `epoch`
    double last_loss = 0.0;
    std::vector<MetricPoint> history;
    std::vector<std::size_t> refresh_steps;
};

struct TrainData {
    const EmbeddingMatrix* queries = nullptr;  // base query embeddings, unit rows
    const EmbeddingMatrix* docs = nullptr;     // frozen store
    const RelevanceLabels* qrels = nullptr;
};

struct TrainHooks {
    // Called after every negative refresh with the step, the head and the
    // freshly mined pool, and once more after the last step.
    std::function<void(std::size_t, const AdapterHead&, const NegativePool&)> on_refresh;
    // When set, checkpoints are written to `<dir>/step-<n>` and `<dir>/final`.
    std::filesystem::path checkpoint_dir;
    // Optional initial negative pool used instead of mining at step 0.
    const NegativePool* initial_negatives = nullptr;
};

/// Fresh state for `head`; the first call to `train` starts at step 0.
TrainState init_train_state(const TrainConfig& config, AdapterHead head);

/// Runs steps from `state.step` to `config.total_steps`.
TrainState train(const TrainConfig& config, TrainState state, const TrainData& data,
                 const TrainHooks& hooks = {});

/// One (query, positive) pair per labeled positive, in query row order.
std::vector<TrainingPair> training_pairs(const TrainData& data);

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);

std::string history_tsv(const std::vector<MetricPoint>& history);

void save_negatives(const NegativePool& pool, const std::filesystem::path& path);
NegativePool load_negatives(const std::filesystem::path& path);

}  // namespace qadapt
