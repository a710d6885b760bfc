#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support.hpp"

#include "esfpnet/serialize.hpp"

#include <filesystem>
#include <fstream>

using namespace esfp;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::create_directories(fs::temp_directory_path() / "esfpnet_test_archive");
  return fs::temp_directory_path() / "esfpnet_test_archive" / name;
}

}  // namespace

TEST_CASE("encode and decode round-trip") {
  Archive a;
  a.variant = "B0";
  a.tensors.push_back({"x", {2, 3}, DType::f32, {1, 2, 3, 4, 5, 6.5}});
  a.tensors.push_back({"y", {1}, DType::f64, {0.1}});
  const auto b = decode_archive(encode_archive(a));
  CHECK(b.variant == "B0");
  REQUIRE(b.tensors.size() == 2);
  CHECK(b.find("x")->values == a.tensors[0].values);
  CHECK(b.find("y")->values[0] == 0.1);
  CHECK(b.find("z") == nullptr);
}

TEST_CASE("corrupted and truncated archives are rejected") {
  Archive a;
  a.variant = "B0";
  a.tensors.push_back({"x", {4}, DType::f32, {1, 2, 3, 4}});
  auto bytes = encode_archive(a);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_archive(cut), FormatError);
  bytes[bytes.size() / 2] ^= 0x5a;
  CHECK_THROWS_AS(decode_archive(bytes), FormatError);
  CHECK_THROWS_AS(decode_archive({}), FormatError);
}

TEST_CASE("saved model reloads with identical outputs") {
  auto model = build<float>("B0", {5});
  const fs::path path = temp_file("b0.esfp");
  save_model(model, path);
  auto back = load_model<float>(path, {std::string("B0"), true});
  const auto x = test::pattern_image<float>({1, 3, 64, 64});
  CHECK((model.forward(x).array() == back.forward(x).array()).all());
  CHECK_THROWS_AS(load_model<float>(path, {std::string("B2"), true}), TensorMismatchError);
  std::ofstream(temp_file("junk.esfp")) << "junk";
  CHECK_THROWS_AS(load_model<float>(temp_file("junk.esfp")), FormatError);
}

TEST_CASE("pretrained encoder weights load with a manifest") {
  auto src = build<float>("B0", {6});
  Archive enc = encoder_archive(src);
  enc.tensors.pop_back();                           // one missing tensor
  enc.tensors.push_back({"head.weight", {1}, DType::f32, {0}});  // one unexpected
  auto dst = build<float>("B0", {7});
  const auto m = load_pretrained(dst, enc);
  CHECK(m.missing.size() == 1);
  CHECK(m.unexpected == std::vector<std::string>{"head.weight"});
  CHECK(m.loaded.size() + 1 == dst.encoder_parameters().size());
  CHECK((dst.encoder_parameters().front().param->value ==
         src.encoder_parameters().front().param->value).all());

  Archive bad = encoder_archive(src);
  bad.tensors[0].dims = {1, 2, 3};
  auto untouched = build<float>("B0", {7});
  const auto w0 = untouched.encoder_parameters()[1].param->value;
  try {
    load_pretrained(untouched, bad);
    FAIL("shape mismatch should throw");
  } catch (const TensorMismatchError& e) {
    CHECK(e.tensor == "backbone.patch_embed1.proj.weight");
  }
  CHECK((untouched.encoder_parameters()[1].param->value == w0).all());
}
