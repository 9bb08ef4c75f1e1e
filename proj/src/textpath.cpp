#include "fsdepth/textpath.hpp"

#include <cmath>
#include <set>

#include "fsdepth/errors.hpp"

namespace fsdepth {

const std::vector<std::string>& default_category_labels() {
  static const std::vector<std::string> labels = {
      "giant", "extremely close", "close", "not in distance", "a little remote", "far", "unseen"};
  return labels;
}

PromptContext PromptContext::random(Eigen::Index n, Eigen::Index token_width, std::uint64_t seed) {
  if (n < 0 || token_width <= 0) {
    throw DimensionError("PromptContext: invalid shape " + shape_str(n, token_width));
  }
  Rng rng(seed);
  return PromptContext{rng.uniform_matrix(n, token_width, -0.05, 0.05)};
}

void CategoryTokenSet::validate() const {
  if (tokens.rows() < 2) throw ValidationError("category tokens: need at least 2 categories, got " + std::to_string(tokens.rows()));
  if (static_cast<Eigen::Index>(labels.size()) != tokens.rows()) {
    throw ValidationError("category tokens: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(tokens.rows()) + " token rows");
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) throw ValidationError("category tokens: duplicate label '" + l + "'");
  }
  if (!tokens.allFinite()) throw ValidationError("category tokens: non-finite entries");
}

CategoryTokenSet CategoryTokenSet::generate(std::vector<std::string> labels, Eigen::Index token_width,
                                            std::uint64_t seed) {
  CategoryTokenSet set;
  set.tokens.resize(static_cast<Eigen::Index>(labels.size()), token_width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(fnv1a64(labels[i]) ^ seed);
    set.tokens.row(static_cast<Eigen::Index>(i)) = rng.normal_matrix(1, token_width);
  }
  set.labels = std::move(labels);
  set.validate();
  return set;
}

ReferenceTextEncoder ReferenceTextEncoder::make(std::uint64_t seed, EncoderDims dims) {
  if (dims.token_width <= 0 || dims.hidden <= 0 || dims.embed <= 0) {
    throw DimensionError("ReferenceTextEncoder: dimensions must be positive");
  }
  Rng rng(seed);
  ReferenceTextEncoder enc;
  const double a1 = 1.0 / std::sqrt(static_cast<double>(dims.token_width));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
  enc.w1 = rng.uniform_matrix(dims.token_width, dims.hidden, -a1, a1);
  enc.w2 = rng.uniform_matrix(dims.hidden, dims.embed, -a2, a2);
  enc.seed = seed;
  return enc;
}

std::vector<Matrix> assemble_prompts(const PromptContext& ctx, const CategoryTokenSet& cats) {
  if (ctx.token_width() != cats.token_width()) {
    throw DimensionError("assemble_prompts: context width " + std::to_string(ctx.token_width()) +
                         " != category token width " + std::to_string(cats.token_width()));
  }
  std::vector<Matrix> prompts;
  prompts.reserve(static_cast<std::size_t>(cats.size()));
  for (Eigen::Index i = 0; i < cats.size(); ++i) {
    Matrix t(ctx.length() + 1, ctx.token_width());
    t.topRows(ctx.length()) = ctx.vectors;
    t.bottomRows(1) = cats.tokens.row(i);
    prompts.push_back(std::move(t));
  }
  return prompts;
}

std::vector<Var> record_prompts(Tape& tape, Var context, const CategoryTokenSet& cats) {
  if (tape.value(context).cols() != cats.token_width()) {
    throw DimensionError("assemble_prompts: context width " + std::to_string(tape.value(context).cols()) +
                         " != category token width " + std::to_string(cats.token_width()));
  }
  std::vector<Var> prompts;
  for (Eigen::Index i = 0; i < cats.size(); ++i) {
    Var token = tape.constant(cats.tokens.row(i));
    prompts.push_back(tape.vstack({context, token}));
  }
  return prompts;
}

Var encode_text(Tape& tape, const ReferenceTextEncoder& encoder, Var prompt) {
  const Matrix& t = tape.value(prompt);
  if (t.rows() < 1) throw DimensionError("encode_text: empty prompt");
  if (t.cols() != encoder.token_width()) {
    throw DimensionError("encode_text: prompt width " + std::to_string(t.cols()) + " != encoder width " +
                         std::to_string(encoder.token_width()));
  }
  Var pooled = tape.mean_pool_rows(prompt);
  Var hidden = tape.gelu(tape.matmul(pooled, tape.constant(encoder.w1)));
  Var embed = tape.matmul(hidden, tape.constant(encoder.w2));
  return tape.l2_normalize_rows(embed);
}

Var record_text_bank(Tape& tape, Var context, const CategoryTokenSet& cats,
                     const ReferenceTextEncoder& encoder) {
  std::vector<Var> rows;
  for (Var prompt : record_prompts(tape, context, cats)) rows.push_back(encode_text(tape, encoder, prompt));
  return tape.vstack(rows);
}

TextFeatureBank build_text_bank(const PromptContext& ctx, const CategoryTokenSet& cats,
                                const ReferenceTextEncoder& encoder) {
  Tape tape;
  Var bank = record_text_bank(tape, tape.constant(ctx.vectors), cats, encoder);
  return TextFeatureBank{tape.value(bank)};
}

}  // namespace fsdepth
