#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cytocon/config.hpp"
#include "cytocon/error.hpp"
#include "cytocon/trainer.hpp"

namespace fs = std::filesystem;
using namespace cytocon;

TEST(Settings, DefaultsAreDeskPreset) {
  const auto s = Settings::resolve({}, {});
  EXPECT_EQ(s.get("preset"), "desk");
  EXPECT_EQ(s.get_int("batch-size"), 64);
  EXPECT_EQ(s.get_int("input-side"), 64);
  EXPECT_EQ(s.get_double("temperature"), 0.07);
  EXPECT_FALSE(s.get_optional_int("holdout-brain").has_value());
}

TEST(Settings, PrecedenceFlagsOverFileOverPreset) {
  const Settings::Pairs file{{"preset", "canonical"}, {"batch-size", "512"}, {"seed", "3"}};
  const Settings::Pairs flags{{"seed", "9"}};
  const auto s = Settings::resolve(file, flags);
  EXPECT_EQ(s.get_int("input-side"), 1129);  // from the canonical preset
  EXPECT_EQ(s.get_int("batch-size"), 512);   // file beats preset
  EXPECT_EQ(s.get_u64("seed"), 9u);          // flag beats file
  const auto flag_preset = Settings::resolve(file, {{"preset", "desk"}});
  EXPECT_EQ(flag_preset.get_int("input-side"), 64);
  EXPECT_EQ(flag_preset.get_int("batch-size"), 512);
}

TEST(Settings, ParseTextCommentsAndUnderscores) {
  const auto pairs = Settings::parse_text("# run\nbatch_size = 32\n\ntemperature=0.1  # colder\n");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], (std::pair<std::string, std::string>{"batch-size", "32"}));
  EXPECT_EQ(pairs[1].second, "0.1");
}

TEST(Settings, UnknownKeyNamesFileAndLine) {
  const fs::path path = fs::temp_directory_path() / "cytocon_bad.cfg";
  std::ofstream(path) << "seed=1\nlearning-rat=0.1\n";
  try {
    Settings::parse_file(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning-rat"), std::string::npos) << msg;
  }
  EXPECT_THROW(Settings::parse_text("noequals\n"), ConfigError);
  EXPECT_THROW(Settings::preset("laptop"), ConfigError);
}

TEST(Settings, TypedGettersValidate) {
  Settings s;
  s.set("batch-size", "abc");
  EXPECT_THROW(s.get_int("batch-size"), ConfigError);
  s.set("seed", "-1");
  EXPECT_THROW(s.get_u64("seed"), ConfigError);
  s.set("augment", "maybe");
  EXPECT_THROW(s.get_bool("augment"), ConfigError);
  EXPECT_THROW(s.set("nope", "1"), ConfigError);
}

TEST(Settings, HashTracksResolvedValues) {
  const auto a = Settings::resolve({}, {});
  const auto b = Settings::resolve({}, {{"seed", "8"}});
  EXPECT_EQ(a.hash(), Settings::resolve({}, {}).hash());
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  // The resolved text reparses to the same settings.
  EXPECT_EQ(Settings::resolve(Settings::parse_text(a.resolved_text()), {}).hash(), a.hash());
}

TEST(TrainConfigFromSettings, DeskAndCanonical) {
  const auto desk = TrainConfig::from_settings(Settings::resolve({}, {}));
  EXPECT_EQ(desk.batch_size, 64);
  EXPECT_EQ(desk.model.encoder.input_side, 64);
  EXPECT_EQ(desk.model.encoder.stem_stride, 2);
  EXPECT_EQ(desk.scratch_epochs, desk.contrastive_epochs + desk.probe_epochs);
  EXPECT_NO_THROW(desk.validate());
  EXPECT_DOUBLE_EQ(desk.learning_rate(), 0.005);

  const auto canon = TrainConfig::from_settings(Settings::resolve({{"preset", "canonical"}}, {}));
  EXPECT_EQ(canon.batch_size, 4096);
  EXPECT_EQ(canon.workers, 32);
  EXPECT_EQ(canon.contrastive_epochs, 150);
  EXPECT_EQ(canon.probe_epochs, 30);
  EXPECT_EQ(canon.scratch_epochs, 180);
  EXPECT_EQ(canon.learning_rate(), 0.32);
  EXPECT_NO_THROW(canon.validate());
}

TEST(TrainConfigFromSettings, RejectsInconsistentValues) {
  EXPECT_THROW(TrainConfig::from_settings(Settings::resolve({}, {{"workers", "3"}})).validate(),
               ConfigError);
  EXPECT_THROW(TrainConfig::from_settings(Settings::resolve({}, {{"scratch-epochs", "4"}})).validate(),
               ConfigError);
  EXPECT_THROW(TrainConfig::from_settings(Settings::resolve({}, {{"temperature", "0"}})).validate(),
               ConfigError);
  EXPECT_THROW(TrainConfig::from_settings(Settings::resolve({}, {{"stem-stride", "4"}})).validate(),
               ConfigError);
}

TEST(TrainConfig, PresetsUseScaledLearningRate) {
  EXPECT_DOUBLE_EQ(TrainConfig::desk().learning_rate(), scaled_lr(64));
  EXPECT_DOUBLE_EQ(TrainConfig::canonical().learning_rate(), 0.32);
  TrainConfig fixed = TrainConfig::desk();
  fixed.optimizer.learning_rate = 0.02;
  EXPECT_DOUBLE_EQ(fixed.learning_rate(), 0.02);
}
