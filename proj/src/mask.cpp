// SPDX-License-Identifier: Apache-2.0
#include <set>
#include <utility>

#include "chunkflow/error.hpp"
#include "chunkflow/model.hpp"

namespace chunkflow {

std::size_t SequenceLayout::num_tokens() const {
  std::size_t n = 0;
  for (const Block& b : blocks_) n += b.num_tokens;
  return n;
}

std::size_t SequenceLayout::first_token(std::size_t block) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < block; ++i) n += blocks_.at(i).num_tokens;
  return n;
}

std::vector<std::size_t> SequenceLayout::token_rows(BlockKind kind) const {
  std::vector<std::size_t> rows;
  std::size_t row = 0;
  for (const Block& b : blocks_) {
    for (std::size_t i = 0; i < b.num_tokens; ++i, ++row)
      if (b.kind == kind) rows.push_back(row);
  }
  return rows;
}

SequenceLayout SequenceLayout::concat(const SequenceLayout& tail) const {
  std::vector<Block> all = blocks_;
  all.insert(all.end(), tail.blocks_.begin(), tail.blocks_.end());
  return SequenceLayout(std::move(all));
}

void validate_layout(const SequenceLayout& layout) {
  std::set<std::pair<std::size_t, int>> seen;
  for (std::size_t i = 0; i < layout.num_blocks(); ++i) {
    const Block& b = layout.blocks()[i];
    if (b.num_tokens == 0) fail(ErrorKind::kLayout, "block " + std::to_string(i) + " has no tokens");
    if (i > 0 && b.chunk < layout.blocks()[i - 1].chunk)
      fail(ErrorKind::kLayout, "chunk indices out of order at block " + std::to_string(i));
    if (!seen.emplace(b.chunk, static_cast<int>(b.kind)).second)
      fail(ErrorKind::kLayout, "duplicate block for chunk " + std::to_string(b.chunk));
    if (!(b.level >= 0.0 && b.level <= 1.0)) fail(ErrorKind::kLayout, "block level outside [0, 1]");
  }
}

namespace {

bool block_visible(MaskParadigm paradigm, const Block& query, const Block& key) {
  if (key.chunk > query.chunk) return false;
  if (query.kind == BlockKind::kClean) return key.kind == BlockKind::kClean;
  if (paradigm == MaskParadigm::kDiffusionForcing) return key.kind == BlockKind::kNoisy;
  return key.kind == BlockKind::kClean && key.chunk < query.chunk;
}

}  // namespace

AttentionMask build_mask(MaskParadigm paradigm, const SequenceLayout& layout) {
  validate_layout(layout);
  const std::size_t n = layout.num_tokens();
  AttentionMask mask(n);
  std::size_t qoff = 0;
  for (std::size_t qb = 0; qb < layout.num_blocks(); ++qb) {
    const Block& q = layout.blocks()[qb];
    std::size_t koff = 0;
    for (std::size_t kb = 0; kb < layout.num_blocks(); ++kb) {
      const Block& k = layout.blocks()[kb];
      const bool visible = qb == kb || block_visible(paradigm, q, k);
      if (visible)
        for (std::size_t i = 0; i < q.num_tokens; ++i)
          for (std::size_t j = 0; j < k.num_tokens; ++j) mask.set(qoff + i, koff + j, true);
      koff += k.num_tokens;
    }
    qoff += q.num_tokens;
  }
  return mask;
}

AttentionMask bidirectional_mask(std::size_t tokens) { return AttentionMask(tokens, true); }

}  // namespace chunkflow
