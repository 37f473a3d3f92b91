// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <numbers>

#include "chunkflow/error.hpp"
#include "chunkflow/model.hpp"

namespace chunkflow {

std::string role_name(ModelRole role) {
  switch (role) {
    case ModelRole::kStudent: return "student";
    case ModelRole::kCritic: return "critic";
    case ModelRole::kTeacher: return "teacher";
  }
  return "unknown";
}

ModelRole parse_role(const std::string& name) {
  if (name == "student") return ModelRole::kStudent;
  if (name == "critic") return ModelRole::kCritic;
  if (name == "teacher") return ModelRole::kTeacher;
  fail(ErrorKind::kConfig, "unknown model role '" + name + "'");
}

namespace {

constexpr std::size_t kStemParams = 6;   // in.w in.b level.w level.b cond.w frame.emb
constexpr std::size_t kBlockParams = 13;

struct Spec {
  std::string name;
  Shape shape;
  enum Init { kFanIn, kOnes, kZeros, kSmall } init;
};

std::vector<Spec> parameter_specs(const ModelConfig& c) {
  std::vector<Spec> s = {
      {"in.w", {c.token_dim, c.width}, Spec::kFanIn},
      {"in.b", {c.width}, Spec::kZeros},
      {"level.w", {c.level_features, c.width}, Spec::kFanIn},
      {"level.b", {c.width}, Spec::kZeros},
      {"cond.w", {c.cond_dim, c.width}, Spec::kFanIn},
      {"frame.emb", {c.tokens_per_chunk, c.width}, Spec::kSmall},
  };
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    s.push_back({p + "ln1.g", {c.width}, Spec::kOnes});
    s.push_back({p + "ln1.b", {c.width}, Spec::kZeros});
    s.push_back({p + "attn.wq", {c.width, c.width}, Spec::kFanIn});
    s.push_back({p + "attn.wk", {c.width, c.width}, Spec::kFanIn});
    s.push_back({p + "attn.wv", {c.width, c.width}, Spec::kFanIn});
    s.push_back({p + "attn.wo", {c.width, c.width}, Spec::kFanIn});
    s.push_back({p + "attn.bo", {c.width}, Spec::kZeros});
    s.push_back({p + "ln2.g", {c.width}, Spec::kOnes});
    s.push_back({p + "ln2.b", {c.width}, Spec::kZeros});
    s.push_back({p + "mlp.w1", {c.width, c.mlp_hidden}, Spec::kFanIn});
    s.push_back({p + "mlp.b1", {c.mlp_hidden}, Spec::kZeros});
    s.push_back({p + "mlp.w2", {c.mlp_hidden, c.width}, Spec::kFanIn});
    s.push_back({p + "mlp.b2", {c.width}, Spec::kZeros});
  }
  s.push_back({"out.ln.g", {c.width}, Spec::kOnes});
  s.push_back({"out.ln.b", {c.width}, Spec::kZeros});
  s.push_back({"out.w", {c.width, c.token_dim}, Spec::kZeros});
  s.push_back({"out.b", {c.token_dim}, Spec::kZeros});
  return s;
}

void check_config(const ModelConfig& c) {
  if (c.token_dim == 0 || c.tokens_per_chunk == 0 || c.cond_dim == 0 || c.width == 0 || c.blocks == 0 ||
      c.mlp_hidden == 0 || c.level_features < 2)
    fail(ErrorKind::kConfig, "model extents must be positive");
  if (c.heads == 0 || c.width % c.heads != 0) fail(ErrorKind::kConfig, "model width must divide into heads");
  if (c.head_slopes.size() != c.heads) fail(ErrorKind::kConfig, "head_slopes needs one entry per head");
}

Tensor level_features(const SequenceLayout& layout, std::size_t features) {
  Tensor f(Shape{layout.num_tokens(), features}, 0.0);
  std::size_t row = 0;
  for (const Block& b : layout.blocks()) {
    for (std::size_t i = 0; i < b.num_tokens; ++i, ++row) {
      for (std::size_t k = 0; k < features; ++k) {
        const double freq = std::numbers::pi * static_cast<double>(k / 2) + (k % 2 ? 0.5 * std::numbers::pi : 0.0);
        f.at(row, k) = (k % 2) ? std::sin(freq * b.level) : std::cos(freq * b.level);
      }
    }
  }
  return f;
}

std::vector<double> token_positions(const SequenceLayout& layout, std::size_t tokens_per_chunk) {
  std::vector<double> pos;
  for (const Block& b : layout.blocks())
    for (std::size_t i = 0; i < b.num_tokens; ++i)
      pos.push_back(static_cast<double>(b.chunk * tokens_per_chunk + i));
  return pos;
}

std::vector<std::size_t> frame_offsets(const SequenceLayout& layout, std::size_t tokens_per_chunk) {
  std::vector<std::size_t> off;
  for (const Block& b : layout.blocks())
    for (std::size_t i = 0; i < b.num_tokens; ++i) off.push_back(i % tokens_per_chunk);
  return off;
}

}  // namespace

DenoiserModel::DenoiserModel(ModelConfig config, ModelRole role, std::uint64_t init_seed)
    : config_(std::move(config)), role_(role) {
  check_config(config_);
  RngStream stream(init_seed, 0x1A17);
  for (const Spec& s : parameter_specs(config_)) {
    Tensor t(s.shape, 0.0);
    switch (s.init) {
      case Spec::kFanIn: {
        const double std = 1.0 / std::sqrt(static_cast<double>(s.shape[0]));
        t = std * gaussian_sample(stream, s.shape);
        break;
      }
      case Spec::kSmall: t = 0.1 * gaussian_sample(stream, s.shape); break;
      case Spec::kOnes: t = Tensor(s.shape, 1.0); break;
      case Spec::kZeros: break;
    }
    params_.push_back({s.name, std::move(t)});
  }
}

DenoiserModel::DenoiserModel(ModelConfig config, ModelRole role, std::vector<NamedTensor> params)
    : config_(std::move(config)), role_(role), params_(std::move(params)) {
  check_config(config_);
  check_parameters();
}

void DenoiserModel::check_parameters() const {
  const auto specs = parameter_specs(config_);
  if (specs.size() != params_.size())
    fail(ErrorKind::kFormat, "parameter count " + std::to_string(params_.size()) + " does not match config (" +
                                 std::to_string(specs.size()) + ")");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name != params_[i].name || specs[i].shape != params_[i].value.shape())
      fail(ErrorKind::kFormat, "parameter '" + params_[i].name + "' does not match expected '" + specs[i].name +
                                   "' " + shape_string(specs[i].shape));
  }
}

DenoiserModel DenoiserModel::with_role(ModelRole role) const {
  DenoiserModel m = *this;
  m.role_ = role;
  return m;
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

const Tensor& DenoiserModel::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  fail(ErrorKind::kConfig, "no parameter named '" + name + "'");
}

Tensor& DenoiserModel::parameter(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const DenoiserModel&>(*this).parameter(name));
}

void DenoiserModel::zero_output_head() {
  parameter("out.w") = Tensor(parameter("out.w").shape(), 0.0);
  parameter("out.b") = Tensor(parameter("out.b").shape(), 0.0);
}

bool operator==(const DenoiserModel& a, const DenoiserModel& b) {
  if (a.params_.size() != b.params_.size() || a.role_ != b.role_) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i)
    if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
  return true;
}

BoundModel bind(Tape& tape, const DenoiserModel& model, bool trainable) {
  BoundModel b{&model, &tape, {}};
  b.params.reserve(model.parameters().size());
  for (const auto& p : model.parameters())
    b.params.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
  return b;
}

std::vector<Tensor> parameter_grads(const BoundModel& bound) {
  std::vector<Tensor> grads;
  grads.reserve(bound.params.size());
  for (const Var& v : bound.params) grads.push_back(bound.tape->grad(v));
  return grads;
}

// ---------------------------------------------------------------------------

void HistoryCache::append(const SequenceLayout& layout, const std::vector<Var>& keys,
                          const std::vector<Var>& values) {
  const auto rows = layout.token_rows(BlockKind::kClean);
  if (rows.empty()) return;
  const bool first = keys_.empty();
  if (!first && keys.size() != keys_.size()) fail(ErrorKind::kShape, "cache layer count mismatch");
  if (first) {
    keys_.resize(keys.size());
    values_.resize(values.size());
  }
  for (std::size_t l = 0; l < keys.size(); ++l) {
    Var k = ad::gather_rows(keys[l], rows);
    Var v = ad::gather_rows(values[l], rows);
    if (detached_) {
      k = ad::stop_gradient(k);
      v = ad::stop_gradient(v);
    }
    if (first) {
      keys_[l] = k;
      values_[l] = v;
    } else {
      const Var kp[] = {keys_[l], k};
      const Var vp[] = {values_[l], v};
      keys_[l] = ad::concat_rows(kp);
      values_[l] = ad::concat_rows(vp);
    }
  }
  for (const Block& b : layout.blocks())
    if (b.kind == BlockKind::kClean) layout_.push(b);
}

namespace {
std::vector<Tensor> cached_rows(const SequenceLayout& layout, const std::vector<Var>& records, std::size_t chunk) {
  for (std::size_t b = 0; b < layout.num_blocks(); ++b) {
    if (layout.blocks()[b].chunk != chunk) continue;
    std::vector<Tensor> out;
    for (const Var& r : records)
      out.push_back(slice_rows(r.value(), layout.first_token(b), layout.blocks()[b].num_tokens));
    return out;
  }
  fail(ErrorKind::kLayout, "chunk " + std::to_string(chunk) + " is not cached");
}
}  // namespace

std::vector<Tensor> HistoryCache::chunk_keys(std::size_t chunk) const { return cached_rows(layout_, keys_, chunk); }
std::vector<Tensor> HistoryCache::chunk_values(std::size_t chunk) const {
  return cached_rows(layout_, values_, chunk);
}

// ---------------------------------------------------------------------------

ForwardResult forward(const BoundModel& bm, const SequenceLayout& layout, Var tokens, const Tensor& cond,
                      const AttentionMask& mask, const HistoryCache* cache, const ForwardOptions& options) {
  const DenoiserModel& model = *bm.model;
  const ModelConfig& c = model.config();
  Tape& tape = *bm.tape;
  validate_layout(layout);
  const std::size_t n_new = layout.num_tokens();
  const std::size_t n_cache = cache ? cache->layout().num_tokens() : 0;
  if (tokens.value().rows() != n_new || tokens.value().cols() != c.token_dim)
    fail(ErrorKind::kShape, "forward: tokens " + shape_string(tokens.shape()) + " do not match layout of " +
                                std::to_string(n_new) + " tokens x " + std::to_string(c.token_dim));
  if (mask.size() != n_cache + n_new)
    fail(ErrorKind::kShape, "forward: mask size " + std::to_string(mask.size()) + " != " +
                                std::to_string(n_cache + n_new) + " packed tokens");
  if (cond.size() != c.cond_dim) fail(ErrorKind::kShape, "forward: condition width mismatch");
  if (tokens.tape() != &tape) fail(ErrorKind::kShape, "forward: tokens recorded on another tape");

  const auto& P = bm.params;
  auto param = [&](std::size_t i) { return P.at(i); };

  // Token embedding: pixels + noise level + condition + frame-in-chunk.
  Var h = ad::add_bias(ad::matmul(tokens, param(0)), param(1));
  Var lev = ad::add_bias(ad::matmul(tape.constant(level_features(layout, c.level_features)), param(2)), param(3));
  Var cemb = ad::matmul(tape.constant(cond.reshaped({1, c.cond_dim})), param(4));
  const std::vector<std::size_t> zeros(n_new, 0);
  const auto offsets = frame_offsets(layout, c.tokens_per_chunk);
  h = ad::add(h, lev);
  h = ad::add(h, ad::gather_rows(cemb, zeros));
  h = ad::add(h, ad::gather_rows(param(5), offsets));

  // Attention logits bias: mask plus per-head recency slope.
  const auto qpos = token_positions(layout, c.tokens_per_chunk);
  std::vector<double> kpos = cache ? token_positions(cache->layout(), c.tokens_per_chunk) : std::vector<double>{};
  kpos.insert(kpos.end(), qpos.begin(), qpos.end());
  const std::size_t n_keys = kpos.size();
  Tensor bias(Shape{c.heads, n_new, n_keys}, 0.0);
  for (std::size_t hd = 0; hd < c.heads; ++hd)
    for (std::size_t i = 0; i < n_new; ++i)
      for (std::size_t j = 0; j < n_keys; ++j)
        bias[(hd * n_new + i) * n_keys + j] = mask(n_cache + i, j)
                                                  ? -c.head_slopes[hd] * std::abs(qpos[i] - kpos[j])
                                                  : -std::numeric_limits<double>::infinity();

  std::vector<bool> clean_rows(n_new, false);
  for (std::size_t r : layout.token_rows(BlockKind::kClean)) clean_rows[r] = true;

  ForwardResult result;
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::size_t base = kStemParams + b * kBlockParams;
    Var a = ad::layer_norm(h, param(base + 0), param(base + 1));
    Var q = ad::matmul(a, param(base + 2));
    Var k = ad::matmul(a, param(base + 3));
    Var v = ad::matmul(a, param(base + 4));
    if (options.detach_clean_history) {
      k = ad::select_rows(k, ad::stop_gradient(k), clean_rows);
      v = ad::select_rows(v, ad::stop_gradient(v), clean_rows);
    }
    result.keys.push_back(k);
    result.values.push_back(v);
    Var keys = k, values = v;
    if (n_cache > 0) {
      Var ck = cache->keys().at(b), cv = cache->values().at(b);
      if (ck.tape() != &tape || cache->detached()) {
        ck = tape.constant(ck.value());
        cv = tape.constant(cv.value());
      }
      const Var kp[] = {ck, k};
      const Var vp[] = {cv, v};
      keys = ad::concat_rows(kp);
      values = ad::concat_rows(vp);
    }
    Var att = ad::attention(q, keys, values, bias, c.heads);
    h = ad::add(h, ad::add_bias(ad::matmul(att, param(base + 5)), param(base + 6)));
    Var a2 = ad::layer_norm(h, param(base + 7), param(base + 8));
    Var m = ad::gelu(ad::add_bias(ad::matmul(a2, param(base + 9)), param(base + 10)));
    h = ad::add(h, ad::add_bias(ad::matmul(m, param(base + 11)), param(base + 12)));
  }
  const std::size_t head = kStemParams + c.blocks * kBlockParams;
  Var o = ad::layer_norm(h, param(head + 0), param(head + 1));
  result.output = ad::add_bias(ad::matmul(o, param(head + 2)), param(head + 3));
  return result;
}

SequenceLayout noisy_sequence_layout(std::size_t chunks, std::size_t tokens_per_chunk, double level) {
  SequenceLayout layout;
  for (std::size_t t = 0; t < chunks; ++t) layout.push({t, BlockKind::kNoisy, tokens_per_chunk, level});
  return layout;
}

Tensor denoise_sequence(const DenoiserModel& model, const Tensor& noisy, double level, const Tensor& cond) {
  const std::size_t tpc = model.config().tokens_per_chunk;
  if (noisy.rows() % tpc != 0) fail(ErrorKind::kShape, "denoise_sequence: rows not a whole number of chunks");
  Tape tape(false);
  const BoundModel bm = bind(tape, model, false);
  const SequenceLayout layout = noisy_sequence_layout(noisy.rows() / tpc, tpc, level);
  const AttentionMask mask = model.causal() ? build_mask(MaskParadigm::kDiffusionForcing, layout)
                                            : bidirectional_mask(layout.num_tokens());
  return forward(bm, layout, tape.constant(noisy), cond, mask).output.value();
}

}  // namespace chunkflow
