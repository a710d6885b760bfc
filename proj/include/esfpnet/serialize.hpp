#pragma once

#include "esfpnet/archive.hpp"
#include "esfpnet/model.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace esfp {

template <typename Scalar>
constexpr DType dtype_of() {
  return std::is_same_v<Scalar, double> ? DType::f64 : DType::f32;
}

/// Which encoder tensors an archive supplied.
struct LoadManifest {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // expected by the model, absent from the archive
  std::vector<std::string> unexpected;  // in the archive, unknown to the model
};

template <typename Scalar>
NamedTensor to_named(const std::string& name, const Parameter<Scalar>& p) {
  NamedTensor t;
  t.name = name;
  t.dims.assign(p.dims.begin(), p.dims.end());
  t.dtype = dtype_of<Scalar>();
  t.values.assign(p.value.data(), p.value.data() + p.value.size());
  return t;
}

template <typename Scalar>
void assign_from(Parameter<Scalar>& p, const std::string& name, const NamedTensor& t) {
  const std::vector<std::int64_t> want(p.dims.begin(), p.dims.end());
  if (t.dims != want) {
    auto fmt = [](const std::vector<std::int64_t>& d) {
      std::string s = "(";
      for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
      return s + ")";
    };
    throw TensorMismatchError(name, "shape mismatch for tensor '" + name + "': archive " +
                                        fmt(t.dims) + ", model " + fmt(want));
  }
  for (std::size_t i = 0; i < t.values.size(); ++i)
    p.value[Index(i)] = static_cast<Scalar>(t.values[i]);
}

template <typename Scalar>
Archive to_archive(EsfpNet<Scalar>& model) {
  Archive a;
  a.variant = model.spec.id;
  for (const auto& p : model.parameters()) a.tensors.push_back(to_named(p.name, *p.param));
  return a;
}

template <typename Scalar>
void save_model(EsfpNet<Scalar>& model, const std::filesystem::path& path) {
  write_archive(path, to_archive(model));
}

struct ModelLoadOptions {
  std::optional<std::string> expected_variant;  // required variant when strict
  bool strict = true;                           // also: every parameter must be present
};

/// Rebuilds the model named in the file's header and fills every parameter.
/// Nothing is returned unless the whole file validates.
template <typename Scalar>
EsfpNet<Scalar> model_from_archive(const Archive& a, const ModelLoadOptions& opts = {}) {
  if (opts.strict && opts.expected_variant && *opts.expected_variant != a.variant)
    throw TensorMismatchError("", "model file holds variant '" + a.variant + "', expected '" +
                                      *opts.expected_variant + "'");
  EsfpNet<Scalar> model(variant(a.variant));
  for (auto& p : model.parameters()) {
    const NamedTensor* t = a.find(p.name);
    if (!t) {
      if (opts.strict) throw TensorMismatchError(p.name, "model file lacks tensor '" + p.name + "'");
      continue;
    }
    assign_from(*p.param, p.name, *t);
  }
  return model;
}

template <typename Scalar>
EsfpNet<Scalar> load_model(const std::filesystem::path& path, const ModelLoadOptions& opts = {}) {
  return model_from_archive<Scalar>(read_archive(path), opts);
}

/// Overwrites encoder parameters from a weight archive. Tensor names are the
/// reference backbone's (e.g. "block1.0.attn.q.weight"), optionally carrying a
/// "backbone." prefix. Shape disagreements throw on the first offending
/// tensor (in model order) before any parameter is modified; absent tensors
/// are listed in the manifest and left untouched.
template <typename Scalar>
LoadManifest load_pretrained(EsfpNet<Scalar>& model, const Archive& archive) {
  auto find = [&](const std::string& name) -> const NamedTensor* {
    if (const NamedTensor* t = archive.find(name)) return t;
    const std::string bare = name.substr(std::string("backbone.").size());
    return archive.find(bare);
  };
  LoadManifest m;
  auto params = model.encoder_parameters();
  for (auto& p : params) {
    const NamedTensor* t = find(p.name);
    if (!t) continue;
    const std::vector<std::int64_t> want(p.param->dims.begin(), p.param->dims.end());
    if (t->dims != want) assign_from(*p.param, p.name, *t);  // throws with the tensor name
  }
  std::vector<std::string> known;
  for (auto& p : params) {
    known.push_back(p.name);
    known.push_back(p.name.substr(std::string("backbone.").size()));
    if (const NamedTensor* t = find(p.name)) {
      assign_from(*p.param, p.name, *t);
      m.loaded.push_back(p.name);
    } else {
      m.missing.push_back(p.name);
    }
  }
  for (const auto& t : archive.tensors)
    if (std::find(known.begin(), known.end(), t.name) == known.end())
      m.unexpected.push_back(t.name);
  return m;
}

template <typename Scalar>
LoadManifest load_pretrained(EsfpNet<Scalar>& model, const std::filesystem::path& path) {
  return load_pretrained(model, read_archive(path));
}

/// Encoder-only archive in the reference naming (no "backbone." prefix).
template <typename Scalar>
Archive encoder_archive(EsfpNet<Scalar>& model) {
  Archive a;
  for (const auto& p : model.encoder_parameters())
    a.tensors.push_back(
        to_named(p.name.substr(std::string("backbone.").size()), *p.param));
  return a;
}

}  // namespace esfp
