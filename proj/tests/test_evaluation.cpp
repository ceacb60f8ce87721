#include <gtest/gtest.h>

#include "ccr/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ccr;

namespace {

ImageSet small_set(std::int64_t n, std::uint64_t seed) {
  const auto& reg = DomainRegistry::standard();
  ImageSet s;
  s.images = ccr::test::random_images(n, 16, seed);
  Rng rng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    auto l = reg.empty_label();
    for (std::size_t d = 0; d < reg.num_domains(); ++d)
      reg.set_state(l, d, rng.below(static_cast<int>(reg.domains()[d].num_states())));
    s.labels.push_back(l);
    s.identities.push_back(static_cast<int>(i));
  }
  return s;
}

}  // namespace

TEST(Evaluation, PathReportFields) {
  auto m = ccr::test::tiny_model(2);
  const auto data = small_set(5, 1);
  EvalOptions opts;
  opts.config_hash = "h";
  const auto r = evaluate_paths(data, m, opts);
  EXPECT_EQ(r.m, 5u);
  EXPECT_EQ(r.n, 3u);
  EXPECT_EQ(r.rows.size(), 5u);
  for (double v : {r.eac_path1, r.eac_path2, r.rac, r.consistency_label_agreement, r.symbolic_agreement}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  double l1 = 0;
  for (const auto& row : r.rows) l1 += row["consistency_l1"].get<double>() / 5.0;
  EXPECT_NEAR(r.consistency.mean_l1, l1, 1e-9);
  const auto j = r.to_json();
  EXPECT_EQ(j["config_hash"], "h");
  EXPECT_TRUE(j["metrics"].contains("reversibility"));
  EXPECT_EQ(j["eac"]["path1"], r.eac_path1);
}

TEST(Evaluation, PathTargetsFollowRegistryOrder) {
  auto m = ccr::test::tiny_model(2);
  auto data = small_set(2, 3);
  data.labels[0] = AttributeLabel{{0, 1, 0, 0, 1}};  // black hair, no bangs, glasses
  const auto r = evaluate_paths(data, m);
  // Hair moves to the next colour, binary domains switch on.
  const auto p = parse_path(r.rows[0]["path1"].get<std::string>(), m.registry());
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.steps[0].edit, parse_step("+blond", m.registry()).edit);
  EXPECT_EQ(p.steps[1].edit, parse_step("+bangs", m.registry()).edit);
  EXPECT_EQ(p.steps[2].edit, parse_step("+glasses", m.registry()).edit);
  EXPECT_EQ(r.rows[0]["target"], AttributeLabel({{1, 0, 1, 0, 1}}).to_string());
}

TEST(EvaluationProperty, ReportIsDeterministic) {
  auto m = ccr::test::tiny_model(4);
  const auto data = small_set(3, 2);
  EvalOptions a;
  a.seed = 9;
  EXPECT_EQ(evaluate_paths(data, m, a).to_json(), evaluate_paths(data, m, a).to_json());
  EvalOptions b = a;
  b.max_images = 2;
  EXPECT_EQ(evaluate_paths(data, m, b).m, 2u);
}

TEST(Evaluation, EmptySetIsError) {
  auto m = ccr::test::tiny_model();
  ImageSet empty;
  EXPECT_THROW(evaluate_paths(empty, m), std::invalid_argument);
  EXPECT_THROW(single_attribute_accuracy(empty, m), std::invalid_argument);
}

TEST(Evaluation, SingleAttributeAccuracyKeys) {
  auto m = ccr::test::tiny_model(1);
  const auto acc = single_attribute_accuracy(small_set(12, 5), m, 0);
  for (const auto& [name, v] : acc) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_TRUE(acc.count("glasses"));
  EXPECT_TRUE(acc.count("blond_hair"));
}

TEST(Evaluation, ClassifierAccuracyAgainstOwnPredictions) {
  auto m = ccr::test::tiny_model(1);
  auto data = small_set(6, 7);
  const auto pred = m.classify_attributes(data.images);
  data.labels = pred.labels;
  for (const auto& [name, v] : classifier_bit_accuracy(data, m)) EXPECT_EQ(v, 1.0) << name;
  data.labels[0].bits[4] ^= 1u;
  EXPECT_NEAR(classifier_bit_accuracy(data, m).at("glasses"), 5.0 / 6.0, 1e-12);
}

TEST(Evaluation, ReconstructionErrorMatchesOracle) {
  auto m = ccr::test::tiny_model(1);
  const auto data = small_set(3, 8);
  torch::NoGradGuard guard;
  const auto rec = m.generate(m.encode(data.images));
  double want = 0;
  for (int i = 0; i < 3; ++i)
    want += oracle::mean_l1(oracle::from_tensor(rec[i]), oracle::from_tensor(data.images[i])) / 3.0;
  EXPECT_NEAR(reconstruction_error(data, m), want, 1e-6);
}

TEST(Ablation, Variants) {
  EXPECT_EQ(ablation_variants(), (std::vector<std::string>{"no_attention", "no_affine", "neither", "idloss"}));
  const TrainConfig base;
  EXPECT_EQ(apply_variant(base, "default").to_json(), base.to_json());
  const auto neither = apply_variant(base, "neither");
  EXPECT_FALSE(neither.model.use_attention);
  EXPECT_FALSE(neither.model.use_affine);
  EXPECT_FALSE(apply_variant(base, "no_attention").model.use_attention);
  EXPECT_TRUE(apply_variant(base, "no_attention").model.use_affine);
  EXPECT_FALSE(apply_variant(base, "no_affine").model.use_affine);
  const auto id = apply_variant(base, "idloss");
  EXPECT_TRUE(id.model.use_identity_loss);
  EXPECT_EQ(id.weights.lambda_id, kAblationIdentityWeight);
  EXPECT_NO_THROW(id.validate());
  EXPECT_THROW(apply_variant(base, "nope"), std::invalid_argument);
}

TEST(Ablation, RowColumns) {
  auto m = ccr::test::tiny_model(1);
  const auto e = evaluate_all(small_set(3, 9), m);
  const auto row = ablation_row("neither", apply_variant(TrainConfig{}, "neither"), e);
  for (const auto* key : {"variant", "use_attention", "use_affine", "use_identity_loss", "identity_loss_weight",
                          "eac_path1", "eac_path2", "rac", "single_attribute_accuracy", "consistency_l1",
                          "reversibility_mse"})
    EXPECT_TRUE(row.contains(key)) << key;
  EXPECT_EQ(row["use_attention"], false);
  EXPECT_EQ(row["eac_path1"], e.paths.eac_path1);
  const auto full = e.to_json();
  EXPECT_TRUE(full.contains("classifier_bit_accuracy"));
  EXPECT_TRUE(full.contains("reconstruction_l1"));
}
