// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chunkflow/autodiff.hpp"
#include "chunkflow/rng.hpp"
#include "chunkflow/schedule.hpp"
#include "chunkflow/tensor.hpp"

namespace chunkflow {

// ---------------------------------------------------------------------------
// Sequence layout and attention masks

enum class BlockKind { kNoisy, kClean };

struct Block {
  std::size_t chunk;        // 0-based chunk index
  BlockKind kind;
  std::size_t num_tokens;
  double level;             // noise level carried by every token of the block
};

// Ordered blocks of a packed token sequence; token spans are implied by order.
class SequenceLayout {
 public:
  SequenceLayout() = default;
  explicit SequenceLayout(std::vector<Block> blocks) : blocks_(std::move(blocks)) {}

  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t num_tokens() const;
  std::size_t first_token(std::size_t block) const;
  void push(Block b) { blocks_.push_back(b); }
  // Rows of all tokens in blocks of the given kind, in order.
  std::vector<std::size_t> token_rows(BlockKind kind) const;
  SequenceLayout concat(const SequenceLayout& tail) const;

 private:
  std::vector<Block> blocks_;
};

// Figure-1 style paradigms; all share within-chunk bidirectional attention.
enum class MaskParadigm { kTeacherForcing, kDiffusionForcing, kSelfForcing, kInterleaved };

class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n, bool fill = false) : n_(n), allow_(n * n, fill ? 1 : 0) {}
  std::size_t size() const noexcept { return n_; }
  bool operator()(std::size_t query, std::size_t key) const { return allow_[query * n_ + key] != 0; }
  void set(std::size_t query, std::size_t key, bool v) { allow_[query * n_ + key] = v ? 1 : 0; }
  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> allow_;
};

// Teacher forcing / self forcing / interleaved: noisy block t sees clean
// blocks < t and itself; clean block t sees clean blocks <= t. Diffusion
// forcing: noisy block t sees noisy blocks <= t. Throws kLayout when chunk
// indices go backwards or a (chunk, kind) pair repeats.
AttentionMask build_mask(MaskParadigm paradigm, const SequenceLayout& layout);
AttentionMask bidirectional_mask(std::size_t tokens);
void validate_layout(const SequenceLayout& layout);

// ---------------------------------------------------------------------------
// Denoiser

enum class ModelRole { kStudent, kCritic, kTeacher };
std::string role_name(ModelRole role);
ModelRole parse_role(const std::string& name);

struct ModelConfig {
  std::size_t token_dim = 64;        // pixels per frame
  std::size_t tokens_per_chunk = 3;  // frames per chunk
  std::size_t cond_dim = 4;
  std::size_t width = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  std::size_t level_features = 16;
  // Per-head recency bias: logits get -slope * |frame distance|.
  std::vector<double> head_slopes = {0.0, 0.25, 0.5, 1.0};

  std::size_t chunk_elements() const { return token_dim * tokens_per_chunk; }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

class DenoiserModel {
 public:
  DenoiserModel(ModelConfig config, ModelRole role, std::uint64_t init_seed);
  DenoiserModel(ModelConfig config, ModelRole role, std::vector<NamedTensor> params);

  const ModelConfig& config() const noexcept { return config_; }
  ModelRole role() const noexcept { return role_; }
  bool causal() const noexcept { return role_ == ModelRole::kStudent; }
  DenoiserModel with_role(ModelRole role) const;

  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  std::size_t parameter_count() const;
  const Tensor& parameter(const std::string& name) const;
  Tensor& parameter(const std::string& name);
  void zero_output_head();

  friend bool operator==(const DenoiserModel& a, const DenoiserModel& b);

 private:
  void check_parameters() const;

  ModelConfig config_;
  ModelRole role_;
  std::vector<NamedTensor> params_;
};

// Parameters placed on a tape, trainable (leaves) or frozen (constants).
struct BoundModel {
  const DenoiserModel* model = nullptr;
  Tape* tape = nullptr;
  std::vector<Var> params;
};

BoundModel bind(Tape& tape, const DenoiserModel& model, bool trainable);
// Gradients of the last backward() for each bound parameter, in parameter order.
std::vector<Tensor> parameter_grads(const BoundModel& bound);

// Per-layer key/value records of clean history blocks: H(x_{<t}).
class HistoryCache {
 public:
  HistoryCache() = default;
  explicit HistoryCache(bool detached) : detached_(detached) {}

  bool detached() const noexcept { return detached_; }
  bool empty() const noexcept { return layout_.num_blocks() == 0; }
  const SequenceLayout& layout() const noexcept { return layout_; }
  std::size_t num_chunks() const noexcept { return layout_.num_blocks(); }
  const std::vector<Var>& keys() const noexcept { return keys_; }
  const std::vector<Var>& values() const noexcept { return values_; }

  // Appends records for the clean blocks of `layout` from a forward result.
  void append(const SequenceLayout& layout, const std::vector<Var>& keys, const std::vector<Var>& values);
  // Per-layer records for cached chunk `chunk` (0-based), as values.
  std::vector<Tensor> chunk_keys(std::size_t chunk) const;
  std::vector<Tensor> chunk_values(std::size_t chunk) const;

 private:
  bool detached_ = false;
  SequenceLayout layout_;
  std::vector<Var> keys_;
  std::vector<Var> values_;
};

struct ForwardOptions {
  // Self-forcing semantics inside a packed pass: keys/values of clean blocks
  // are cut from the graph before any query reads them.
  bool detach_clean_history = false;
};

struct ForwardResult {
  Var output;                // [L x token_dim] predicted clean endpoints
  std::vector<Var> keys;     // per layer, [L x width]
  std::vector<Var> values;
};

// Runs the denoiser over the tokens of `layout` (rows of `tokens`). `mask`
// spans cached tokens followed by the new tokens.
ForwardResult forward(const BoundModel& model, const SequenceLayout& layout, Var tokens, const Tensor& cond,
                      const AttentionMask& mask, const HistoryCache* cache = nullptr,
                      const ForwardOptions& options = {});

// Convenience: frozen bidirectional pass over T noisy chunks at a single level.
Tensor denoise_sequence(const DenoiserModel& model, const Tensor& noisy, double level, const Tensor& cond);
SequenceLayout noisy_sequence_layout(std::size_t chunks, std::size_t tokens_per_chunk, double level);

// ---------------------------------------------------------------------------
// Rollouts

struct ChunkSequence {
  std::size_t chunks = 0;
  std::size_t tokens_per_chunk = 0;
  std::size_t dim = 0;
  Tensor data;                  // [chunks * tokens_per_chunk x dim]
  std::vector<double> levels;   // one per chunk

  Tensor chunk(std::size_t t) const { return slice_rows(data, t * tokens_per_chunk, tokens_per_chunk); }
  std::size_t chunk_elements(std::size_t) const { return tokens_per_chunk * dim; }
  void validate() const;
};

struct ChunkTrajectory {
  std::vector<Tensor> states;   // z^(tau_1) ... z^(tau_K), each [tokens_per_chunk x dim]
  Tensor endpoint;              // final clean endpoint x_hat_t
};

struct RolloutRecord {
  std::vector<double> grid;     // tau_1 ... tau_K
  Tensor cond;
  std::vector<ChunkTrajectory> chunks;
  std::uint64_t id = 0;

  std::size_t num_chunks() const noexcept { return chunks.size(); }
  Tensor endpoints() const;     // [T * tokens_per_chunk x dim]
  std::size_t stored_states() const;
};

enum class SamplerKernel { kConsistency, kEulerMaruyama };

struct RolloutOptions {
  bool detach_history = true;
  // Re-encode the full clean prefix for every call instead of using the cache.
  bool recompute_prefix = false;
  // Skip the final endpoint call at tau_K; the endpoint is then z^(tau_K).
  bool skip_final_call = false;
  SamplerKernel kernel = SamplerKernel::kConsistency;
  double em_sigma = 0.0;
  // Teacher forcing: history encodes these chunks instead of the endpoints.
  const std::vector<Tensor>* forced_history = nullptr;
};

ChunkTrajectory rollout_chunk(const BoundModel& model, const NoiseSchedule& sched, const TimestepGrid& grid,
                              const Tensor& cond, const HistoryCache& cache, std::size_t chunk,
                              RngStream& stream, const RolloutOptions& options = {},
                              const std::vector<Tensor>* prefix = nullptr);

// Encodes a clean chunk at level 0 and appends its records to `cache`.
void extend_cache(const BoundModel& model, HistoryCache& cache, const Tensor& clean_chunk, std::size_t chunk,
                  const Tensor& cond);

RolloutRecord autoregressive_rollout(const DenoiserModel& model, const NoiseSchedule& sched, std::size_t chunks,
                                     const TimestepGrid& grid, const Tensor& cond, RngStream& stream,
                                     const RolloutOptions& options = {});

}  // namespace chunkflow
