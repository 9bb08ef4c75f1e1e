#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsdepth/diffcore.hpp"
#include "fsdepth/types.hpp"

namespace fsdepth {

/// The seven depth-category names used for indoor scenes, nearest first.
const std::vector<std::string>& default_category_labels();

/// Learnable context vectors shared by every category prompt: n x C_tok.
struct PromptContext {
  Matrix vectors;

  Eigen::Index length() const { return vectors.rows(); }
  Eigen::Index token_width() const { return vectors.cols(); }

  /// Zero-mean uniform initialization in [-0.05, 0.05].
  static PromptContext random(Eigen::Index n, Eigen::Index token_width, std::uint64_t seed);
};

/// Frozen category tokens m_1..m_K, one row per label.
struct CategoryTokenSet {
  std::vector<std::string> labels;
  Matrix tokens;

  Eigen::Index size() const { return tokens.rows(); }
  Eigen::Index token_width() const { return tokens.cols(); }

  /// Checks K >= 2, unique labels, finite tokens and label/row agreement.
  void validate() const;

  /// Token for each label is a unit-variance normal vector drawn from an Rng
  /// seeded with fnv1a64(label) ^ seed, so a label always maps to the same
  /// vector for a given seed.
  static CategoryTokenSet generate(std::vector<std::string> labels, Eigen::Index token_width,
                                   std::uint64_t seed);
};

struct EncoderDims {
  Eigen::Index token_width = 32;
  Eigen::Index hidden = 64;
  Eigen::Index embed = 64;
};

/// Frozen stand-in text encoder: mean-pool -> W1 -> gelu -> W2 -> L2 normalize.
///
/// W1 and W2 are drawn uniformly from +-1/sqrt(fan_in) by Rng(seed), W1 first,
/// row-major.
struct ReferenceTextEncoder {
  Matrix w1;
  Matrix w2;
  std::uint64_t seed = 0;

  static ReferenceTextEncoder make(std::uint64_t seed, EncoderDims dims = {});

  Eigen::Index token_width() const { return w1.rows(); }
  Eigen::Index embed_width() const { return w2.cols(); }
};

/// K x C matrix of unit-norm text features in category label order.
struct TextFeatureBank {
  Matrix features;
};

/// Row-stacks [V; m_i] for each category. Values only; see record_prompts for
/// the differentiable form.
std::vector<Matrix> assemble_prompts(const PromptContext& ctx, const CategoryTokenSet& cats);

/// Records the K prompts on `tape`, all sharing the single `context` leaf.
std::vector<Var> record_prompts(Tape& tape, Var context, const CategoryTokenSet& cats);

/// Records the encoder on one prompt; returns a 1 x C unit row.
Var encode_text(Tape& tape, const ReferenceTextEncoder& encoder, Var prompt);

/// Records the full bank (K x C) from the `context` leaf.
Var record_text_bank(Tape& tape, Var context, const CategoryTokenSet& cats,
                     const ReferenceTextEncoder& encoder);

/// Evaluates the bank for fixed parameters (inference path).
TextFeatureBank build_text_bank(const PromptContext& ctx, const CategoryTokenSet& cats,
                                const ReferenceTextEncoder& encoder);

}  // namespace fsdepth
