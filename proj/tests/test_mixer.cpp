#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "vlmforge/cli.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/mixer.hpp"

namespace vlmforge {
namespace {

using nlohmann::json;
using testing::TempDir;

MixtureSpec spec_for(std::uint64_t per_category, std::uint64_t seed = 7) {
  MixtureSpec s;
  for (auto c : {Category::general, Category::ocr, Category::knowledge, Category::counting}) s.targets[c] = per_category;
  s.seed = seed;
  return s;
}

TEST(Split, LargestRemainderTiesToAdapted) {
  EXPECT_EQ(split_target(1000, 85, 15), (std::pair<std::uint64_t, std::uint64_t>{850, 150}));
  EXPECT_EQ(split_target(1, 1, 1), (std::pair<std::uint64_t, std::uint64_t>{1, 0}));
  EXPECT_EQ(split_target(7, 85, 15), (std::pair<std::uint64_t, std::uint64_t>{6, 1}));
  EXPECT_EQ(split_target(3, 85, 15), (std::pair<std::uint64_t, std::uint64_t>{3, 0}));
  EXPECT_EQ(split_target(0, 85, 15), (std::pair<std::uint64_t, std::uint64_t>{0, 0}));
  for (std::uint64_t t = 0; t < 300; ++t) {
    const auto [a, o] = split_target(t, 85, 15);
    EXPECT_EQ(a + o, t);
  }
}

TEST(Spec, JsonRoundTripAndValidation) {
  auto s = spec_for(100);
  s.source_weights["general-pl-a"] = 2.0;
  EXPECT_EQ(mixture_spec_from_json(to_json(s)), s);
  json bad = to_json(s);
  bad["balance"] = json::array({0, 15});
  EXPECT_THROW(mixture_spec_from_json(bad), ConfigError);
  bad = to_json(s);
  bad["targets"]["painting"] = 3;
  EXPECT_THROW(mixture_spec_from_json(bad), ConfigError);
}

class Mixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new TempDir("mixture");
    registry_path = testing::make_toy_registry(dir->path(), 200);
  }
  static void TearDownTestSuite() { delete dir; }
  static inline TempDir* dir = nullptr;
  static inline std::filesystem::path registry_path;
};

TEST_F(Mixture, ExactCountsAndBalance) {
  const auto reg = DatasetRegistry::load(registry_path);
  const auto m = compose_mixture(reg, spec_for(100));
  EXPECT_EQ(m.counts.total, 400u);
  for (auto c : {Category::general, Category::ocr, Category::knowledge, Category::counting}) {
    EXPECT_EQ(m.counts.by_category.at(c), 100u);
    EXPECT_EQ(m.counts.by_category_language.at(c).at("pl"), 85u);
    EXPECT_EQ(m.counts.by_category_language.at(c).at("en"), 15u);
  }
  EXPECT_DOUBLE_EQ(m.language_fraction("pl"), 0.85);
  EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end()));
  EXPECT_EQ(m.digest, manifest_digest(m.entries));
  EXPECT_EQ(count_entries(m.entries), m.counts);
}

TEST_F(Mixture, DeterministicAndSeedSensitive) {
  const auto reg = DatasetRegistry::load(registry_path);
  const auto a = compose_mixture(reg, spec_for(100, 7));
  const auto b = compose_mixture(reg, spec_for(100, 7));
  const auto c = compose_mixture(reg, spec_for(100, 8));
  EXPECT_EQ(a.digest, b.digest);
  EXPECT_NE(a.digest, c.digest);
}

TEST_F(Mixture, WeightsShiftAndExcludeSources) {
  const auto reg = DatasetRegistry::load(registry_path);
  auto s = spec_for(100);
  s.source_weights["general-pl-b"] = 0.0;
  const auto m = compose_mixture(reg, s);
  for (const auto& e : m.entries) EXPECT_NE(e.source, "general-pl-b");
  s.source_weights["general-pl-b"] = 1.0;
  s.source_weights["general-pl-a"] = 50.0;
  const auto heavy = compose_mixture(reg, s);
  std::size_t from_a = 0;
  for (const auto& e : heavy.entries) from_a += e.source == "general-pl-a";
  EXPECT_GT(from_a, 60u);
}

TEST_F(Mixture, ShortfallNamesBucket) {
  const auto reg = DatasetRegistry::load(registry_path);
  auto s = spec_for(100);
  s.targets[Category::ocr] = 2000;
  try {
    compose_mixture(reg, s);
    ADD_FAILURE() << "expected CompositionError";
  } catch (const CompositionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("ocr/pl: need 1700, have 400"), std::string::npos) << msg;
    EXPECT_NE(msg.find("ocr/en: need 300, have 200"), std::string::npos) << msg;
  }
}

TEST_F(Mixture, DriftedSourceRejected) {
  TempDir local("drift");
  const auto path = testing::make_toy_registry(local.path(), 20);
  auto convs = testing::make_conversations(20, 999, "x", "pl", Category::ocr);
  write_conversations(convs, local.path() / "data" / "ocr-pl-a.jsonl");
  EXPECT_THROW(compose_mixture(DatasetRegistry::load(path), spec_for(10)), CompositionError);
}

TEST_F(Mixture, ManifestRoundTripAndTamperDetection) {
  TempDir out("manifest");
  const auto reg = DatasetRegistry::load(registry_path);
  const auto m = compose_mixture(reg, spec_for(50));
  write_manifest(m, out.path());
  const auto back = read_manifest(out.path());
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.digest, m.digest);
  EXPECT_EQ(back.spec, m.spec);
  auto text = read_file(out / "manifest.jsonl");
  text.erase(text.find('\n') + 1, text.find('\n', text.find('\n') + 1) - text.find('\n'));
  write_file_atomic(out / "manifest.jsonl", text);
  EXPECT_THROW(read_manifest(out.path()), ContractError);
}

TEST_F(Mixture, PretrainSubset) {
  const auto reg = DatasetRegistry::load(registry_path);
  const auto all = prepare_pretrain(reg, std::nullopt, 1);
  EXPECT_EQ(all.counts.total, 200u);
  const auto some = prepare_pretrain(reg, 50, 1);
  EXPECT_EQ(some.counts.total, 50u);
  EXPECT_EQ(prepare_pretrain(reg, 50, 1).digest, some.digest);
  for (const auto& e : some.entries) EXPECT_EQ(e.category, Category::pretrain);
}

TEST(TrainingConfig, StageValues) {
  Manifest m;
  m.entries = {{"s", "1", Category::general, "pl"}};
  m.counts = count_entries(m.entries);
  m.digest = manifest_digest(m.entries);
  const auto pre = make_training_config(Stage::pretrain, m);
  EXPECT_EQ(pre.trainable, std::set<std::string>{"projector"});
  EXPECT_EQ(pre.batch_size, 256);
  EXPECT_EQ(pre.learning_rates.at("projector"), 1e-3);
  EXPECT_EQ(pre.context_tokens, 8192);
  EXPECT_FALSE(pre.lora);
  const auto ins = make_training_config(Stage::instruct, m);
  EXPECT_EQ(ins.batch_size, 128);
  EXPECT_EQ(ins.lora, (LoraSettings{128, 256, 0.05}));
  EXPECT_EQ(ins.learning_rates.at("vision"), 2e-6);
  EXPECT_EQ(ins.learning_rates.at("projector"), 2e-5);
  EXPECT_EQ(ins.learning_rates.at("llm"), 2e-5);
  EXPECT_EQ(ins.manifest_digest, m.digest);
  for (const auto& cfg : {pre, ins}) {
    const auto text = render_training_config(cfg);
    EXPECT_EQ(parse_training_config(text), cfg);
    EXPECT_EQ(render_training_config(parse_training_config(text)), text);
  }
  EXPECT_THROW(make_training_config(Stage::pretrain, Manifest{}), ContractError);
  EXPECT_THROW(parse_stage("stage3"), ContractError);
  EXPECT_THROW(parse_training_config("[pretrain]\nbatch_size = 1\nbatch_size = 2\n"), ConfigError);
  EXPECT_THROW(parse_training_config("[pretrain]\nmystery = 1\n"), ConfigError);
}

}  // namespace
}  // namespace vlmforge
