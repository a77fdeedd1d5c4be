#include <gtest/gtest.h>

#include "deviloc/config.h"
#include "deviloc/error.h"
#include "deviloc/hashing.h"
#include "test_util.h"

namespace deviloc {
namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kIoError;
}

TEST(ConfigTest, KeyValueText) {
  const AppConfig c = ParseConfig(
      "# paper profile\n"
      "pipeline.tau = 0.5\n"
      "pipeline.s = 2\n"
      "pipeline.topk = 10\n"
      "training.lr = 0.001   # AdamW\n"
      "pin.heads = 2\n"
      "scene.num_points = 400\n");
  EXPECT_EQ(c.pipeline.tau, 0.5);
  EXPECT_EQ(c.pipeline.s, 2.0);
  EXPECT_EQ(c.pipeline.topk, 10);
  EXPECT_EQ(c.training.lr, 0.001);
  EXPECT_EQ(c.pin.heads, 2);
  EXPECT_EQ(c.scene.num_points, 400);
  // Untouched keys keep the desk defaults.
  EXPECT_EQ(c.pin.dim, DeskConfig().pin.dim);
}

TEST(ConfigTest, JsonText) {
  const AppConfig c = ParseConfig(R"({"training": {"batch": 2, "lambda": 0.5},
                                      "pipeline": {"recall_thresholds": [[1, 2]]}})");
  EXPECT_EQ(c.training.batch, 2);
  EXPECT_EQ(c.training.lambda, 0.5);
  ASSERT_EQ(c.pipeline.recall_thresholds.size(), 1u);
  EXPECT_EQ(c.pipeline.recall_thresholds[0], std::make_pair(1.0, 2.0));
}

TEST(ConfigTest, RoundTripsThroughJson) {
  AppConfig c = DeskConfig();
  c.training.theta = 6.0;
  c.pipeline.seed = 42;
  c.scene.terrain_amplitude = 0.05;
  AppConfig back = DeskConfig();
  ApplyConfig(ConfigToJson(c), &back);
  EXPECT_EQ(ConfigToJson(back), ConfigToJson(c));
  EXPECT_EQ(PinConfigToJson(PinConfigFromJson(PinConfigToJson(c.pin))), PinConfigToJson(c.pin));
  EXPECT_EQ(SceneConfigToJson(SceneConfigFromJson(SceneConfigToJson(c.scene))),
            SceneConfigToJson(c.scene));
}

TEST(ConfigTest, Errors) {
  EXPECT_EQ(CodeOf([] { ParseConfig("pipeline.nope = 1\n"); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { ParseConfig("bogus.tau = 1\n"); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { ParseConfig("pipeline.tau 0.5\n"); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { ParseConfig("pipeline.tau = 1.5\n"); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { ParseConfig("pipeline.topk = \"x\"\n"); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { ParseConfig("{\"pipeline\": "); }), ErrorCode::kConfigError);
  EXPECT_EQ(CodeOf([] { LoadConfig("/nonexistent/config.txt"); }), ErrorCode::kConfigError);
}

TEST(ConfigTest, LoadsFromFile) {
  const TempDir dir("config");
  WriteFile(dir.path() / "c.txt", "pipeline.tau = 0\n");
  EXPECT_EQ(LoadConfig(dir.path() / "c.txt").pipeline.tau, 0.0);
}

TEST(HashingTest, KnownDigests) {
  EXPECT_EQ(Sha256Hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(Sha256Hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace deviloc
