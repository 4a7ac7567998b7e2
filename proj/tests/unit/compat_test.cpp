#include <gtest/gtest.h>

#include "labplane/compat.hpp"
#include "labplane/error.hpp"

namespace labplane {
namespace {

Node node_with_max(CudaVersion max) {
  auto n = make_node("gpu-1", 1);
  n.max_cuda = max;
  return n;
}

TEST(Compat, RuntimeMustNotExceedHost) {
  EXPECT_TRUE(cuda_compatible({12, 4}, {13, 0}));
  EXPECT_TRUE(cuda_compatible({13, 0}, {13, 0}));
  EXPECT_FALSE(cuda_compatible({13, 0}, {12, 4}));
}

TEST(Compat, ShippedMatrixRunsOnCuda13Host) {
  const auto node = node_with_max({13, 0});
  for (const auto& image : default_image_matrix()) {
    const auto report = check_compatibility(image, node);
    EXPECT_TRUE(report.compatible) << image.tag;
  }
}

TEST(Compat, ReasonNamesBothVersions) {
  const auto report = check_compatibility(default_image_matrix()[2], node_with_max({12, 1}));
  EXPECT_FALSE(report.compatible);
  EXPECT_NE(report.reason.find("13.0"), std::string::npos);
  EXPECT_NE(report.reason.find("12.1"), std::string::npos);
}

TEST(ImageRegistry, TagsAreImmutable) {
  ImageRegistry reg;
  const auto image = default_image_matrix()[0];
  reg.register_image(image);
  try {
    reg.register_image(image);
    FAIL() << "duplicate accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAlreadyExists);
  }
  auto changed = image;
  changed.cuda_runtime = {12, 4};
  EXPECT_THROW(reg.register_image(changed), Error);
  EXPECT_EQ(reg.at(image.tag), image);
}

TEST(ImageRegistry, UnknownTagIsNotFound) {
  ImageRegistry reg;
  try {
    reg.at("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
}

TEST(Revalidate, DowngradeTo121FlagsNewerImages) {
  ImageRegistry reg;
  for (const auto& image : default_image_matrix()) reg.register_image(image);
  const auto before = node_with_max({13, 0});
  const auto after = node_with_max({12, 1});
  const auto report = revalidate(reg, before, after);
  EXPECT_EQ(report.newly_incompatible, (std::vector<std::string>{"pytorch-2x-cu124", "pytorch-2x-cu130"}));
  EXPECT_TRUE(report.newly_compatible.empty());
  EXPECT_EQ(report.reports.size(), 3u);
  EXPECT_EQ(reg.size(), 3u);

  const auto upgrade = revalidate(reg, after, before);
  EXPECT_EQ(upgrade.newly_compatible.size(), 2u);
  EXPECT_TRUE(revalidate(reg, before, before).unchanged());
}

}  // namespace
}  // namespace labplane
