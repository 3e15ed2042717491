// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Model manifest loading, per-tensor format calibration and the
// double-precision reference forward pass.
//
// A model is a JSON manifest plus a raw weight blob of little-endian IEEE-754
// float32 values; manifest offsets count elements, not bytes. The schema is
// documented in docs/formats.md.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "carmen/afu.hpp"
#include "carmen/error.hpp"
#include "carmen/fxp.hpp"
#include "carmen/mac.hpp"
#include "carmen/peripherals.hpp"

namespace carmen {

enum class ModelErrorCode {
  malformed,
  no_layers,
  missing_field,
  bad_value,
  length_mismatch,
  offset_out_of_range,
  shape_mismatch,
};

inline std::string_view to_string(ModelErrorCode c) {
  switch (c) {
    case ModelErrorCode::malformed: return "malformed";
    case ModelErrorCode::no_layers: return "no-layers";
    case ModelErrorCode::missing_field: return "missing-field";
    case ModelErrorCode::bad_value: return "bad-value";
    case ModelErrorCode::length_mismatch: return "length-mismatch";
    case ModelErrorCode::offset_out_of_range: return "offset-out-of-range";
    case ModelErrorCode::shape_mismatch: return "shape-mismatch";
  }
  return "?";
}

/// Model loading or execution failure. `line` is the 1-based manifest line
/// the problem is anchored to (0 when there is none); `layer` names the
/// offending layer when one is involved.
class ModelError : public Error {
 public:
  ModelError(ModelErrorCode code, std::string message, int line = 0,
             std::string layer = {})
      : Error(format(code, message, line, layer)),
        code_(code),
        line_(line),
        layer_(std::move(layer)) {}

  ModelErrorCode code() const { return code_; }
  int line() const { return line_; }
  const std::string& layer() const { return layer_; }

 private:
  static std::string format(ModelErrorCode code, const std::string& message,
                            int line, const std::string& layer) {
    std::string out = "model error [" + std::string(to_string(code)) + "]";
    if (line > 0) out += " at line " + std::to_string(line);
    if (!layer.empty()) out += " (" + layer + ")";
    return out + ": " + message;
  }

  ModelErrorCode code_;
  int line_;
  std::string layer_;
};

struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::string to_string() const {
    return std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

enum class LayerKind { dense, conv2d };

inline std::string_view to_string(LayerKind k) {
  return k == LayerKind::dense ? "dense" : "conv2d";
}

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

struct NormOffsets {
  std::size_t scale_offset = 0;
  std::size_t shift_offset = 0;
};

/// One compute layer: MAC stage, activation, optional pooling and
/// normalization, in that order.
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::dense;
  int in_features = 0;   // dense
  int out_features = 0;  // dense
  ConvGeometry conv;     // conv2d
  AfKind activation = AfKind::relu;
  std::optional<PoolSpec> pool;
  std::optional<NormOffsets> norm;
  std::optional<MacKind> mode_hint;
  std::size_t weight_offset = 0;
  std::optional<std::size_t> bias_offset;
  int line = 0;

  // Derived during loading.
  Shape in_shape;
  Shape mac_shape;  // MAC/AF output, before pooling
  Shape out_shape;  // after pooling

  std::size_t weight_count() const {
    if (kind == LayerKind::dense) {
      return static_cast<std::size_t>(in_features) * out_features;
    }
    return static_cast<std::size_t>(conv.out_channels) * conv.in_channels *
           conv.kernel_h * conv.kernel_w;
  }
  std::size_t bias_count() const {
    return kind == LayerKind::dense ? static_cast<std::size_t>(out_features)
                                    : static_cast<std::size_t>(conv.out_channels);
  }
  /// Number of dot products (output neurons / output pixels).
  std::size_t dot_count() const { return mac_shape.size(); }
  /// Length of each dot product.
  std::size_t dot_length() const {
    if (kind == LayerKind::dense) return static_cast<std::size_t>(in_features);
    return static_cast<std::size_t>(conv.in_channels) * conv.kernel_h *
           conv.kernel_w;
  }
};

struct LayerTensors {
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> norm_scale;
  std::vector<double> norm_shift;
};

struct LayerFormats {
  FxPFormat weight;
  FxPFormat bias;
  FxPFormat preact;  // dot-product output
  FxPFormat act;     // activation and pooling output
  FxPFormat norm_scale;
  FxPFormat norm_shift;
  FxPFormat out;     // layer output (after normalization, if any)
};

struct QuantizedLayer {
  std::vector<FxPWord> weights;
  std::vector<FxPWord> bias;
  NormSpec norm;
};

struct Model {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::vector<LayerTensors> tensors;

  // Filled by calibrate_formats().
  int width = 0;
  FxPFormat input_format;
  std::vector<LayerFormats> formats;
  std::vector<QuantizedLayer> quantized;

  bool is_quantized() const { return width != 0; }

  /// Input size followed by every layer's output size, e.g. 196-64-32-32-10.
  std::vector<std::size_t> layer_widths() const {
    std::vector<std::size_t> out{input_shape.size()};
    for (const LayerSpec& l : layers) out.push_back(l.out_shape.size());
    return out;
  }
};

namespace detail {

inline int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(),
                                         text.begin() + static_cast<long>(offset),
                                         '\n'));
}

// Line of the opening brace of every element of the top-level "layers"
// array; the JSON library itself does not track positions.
inline std::vector<int> layer_lines(std::string_view text) {
  std::vector<int> lines;
  int depth = 0;
  int line = 1;
  bool in_str = false;
  bool esc = false;
  std::size_t str_start = 0;
  std::string_view last_str;
  int array_depth = -1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') ++line;
    if (in_str) {
      if (esc) {
        esc = false;
      } else if (c == '\\') {
        esc = true;
      } else if (c == '"') {
        in_str = false;
        last_str = text.substr(str_start, i - str_start);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_str = true;
        str_start = i + 1;
        break;
      case '[':
      case '{':
        if (c == '[' && depth == 1 && array_depth == -1 &&
            last_str == "layers") {
          array_depth = depth + 1;
        } else if (c == '{' && array_depth > 0 && depth == array_depth) {
          lines.push_back(line);
        }
        ++depth;
        break;
      case ']':
      case '}':
        --depth;
        if (c == ']' && array_depth > 0 && depth + 1 == array_depth) {
          array_depth = -2;
        }
        break;
      default:
        break;
    }
  }
  return lines;
}

class ManifestReader {
 public:
  ManifestReader(const nlohmann::json& j, int line, std::string layer)
      : j_(j), line_(line), layer_(std::move(layer)) {}

  [[noreturn]] void fail(ModelErrorCode code, const std::string& msg) const {
    throw ModelError(code, msg, line_, layer_);
  }

  const nlohmann::json& require(const char* key) const {
    if (!j_.is_object() || !j_.contains(key)) {
      fail(ModelErrorCode::missing_field,
           std::string("missing field '") + key + "'");
    }
    return j_.at(key);
  }

  bool has(const char* key) const {
    return j_.is_object() && j_.contains(key) && !j_.at(key).is_null();
  }

  int positive_int(const nlohmann::json& v, const std::string& what) const {
    if (!v.is_number_integer() || v.get<long long>() <= 0 ||
        v.get<long long>() > (1LL << 30)) {
      fail(ModelErrorCode::bad_value, what + " must be a positive integer");
    }
    return static_cast<int>(v.get<long long>());
  }

  int non_negative_int(const nlohmann::json& v, const std::string& what) const {
    if (!v.is_number_integer() || v.get<long long>() < 0 ||
        v.get<long long>() > (1LL << 30)) {
      fail(ModelErrorCode::bad_value, what + " must be a non-negative integer");
    }
    return static_cast<int>(v.get<long long>());
  }

  std::size_t offset(const nlohmann::json& v, const std::string& what) const {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      fail(ModelErrorCode::bad_value, what + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(v.get<long long>());
  }

  std::string string(const nlohmann::json& v, const std::string& what) const {
    if (!v.is_string()) fail(ModelErrorCode::bad_value, what + " must be a string");
    return v.get<std::string>();
  }

  std::pair<int, int> pair(const nlohmann::json& v, const std::string& what,
                           bool allow_zero = false) const {
    if (!v.is_array() || v.size() != 2) {
      fail(ModelErrorCode::bad_value, what + " must be a [h, w] pair");
    }
    if (allow_zero) {
      return {non_negative_int(v[0], what), non_negative_int(v[1], what)};
    }
    return {positive_int(v[0], what), positive_int(v[1], what)};
  }

  template <class Fn>
  auto guarded(Fn&& fn) const -> decltype(fn()) {
    try {
      return fn();
    } catch (const ContractViolation& e) {
      fail(ModelErrorCode::bad_value, e.what());
    }
  }

 private:
  const nlohmann::json& j_;
  int line_;
  std::string layer_;
};

inline std::vector<double> decode_f32_le(std::span<const std::uint8_t> bytes) {
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 3; b >= 0; --b) u = (u << 8) | bytes[4 * i + b];
    out[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return out;
}

inline Shape conv_output(const Shape& in, const ConvGeometry& g) {
  const int oh = (in.h + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  const int ow = (in.w + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  return {g.out_channels, oh, ow};
}

inline Shape pool_output(const Shape& in, const PoolSpec& p) {
  return {in.c, (in.h - p.window_h) / p.stride_h + 1,
          (in.w - p.window_w) / p.stride_w + 1};
}

}  // namespace detail

/// Parses a manifest and its weight blob into an un-quantized Model.
///
/// Throws ModelError with a distinct code and, where possible, the manifest
/// line of the offending layer.
inline Model load_manifest(std::string_view manifest_text,
                           std::span<const std::uint8_t> weight_blob) {
  using nlohmann::json;
  json root;
  try {
    root = json::parse(manifest_text.begin(), manifest_text.end());
  } catch (const json::parse_error& e) {
    throw ModelError(ModelErrorCode::malformed, e.what(),
                     detail::line_of_offset(manifest_text, e.byte));
  }
  const detail::ManifestReader top(root, 1, {});
  if (!root.is_object()) {
    top.fail(ModelErrorCode::malformed, "manifest must be a JSON object");
  }

  Model model;
  model.name = top.has("name") ? top.string(root.at("name"), "name") : "model";

  const json& in_shape = top.require("input_shape");
  if (!in_shape.is_array() || (in_shape.size() != 1 && in_shape.size() != 3)) {
    top.fail(ModelErrorCode::bad_value,
             "input_shape must be [features] or [channels, height, width]");
  }
  if (in_shape.size() == 1) {
    model.input_shape = {top.positive_int(in_shape[0], "input_shape"), 1, 1};
  } else {
    model.input_shape = {top.positive_int(in_shape[0], "input_shape"),
                         top.positive_int(in_shape[1], "input_shape"),
                         top.positive_int(in_shape[2], "input_shape")};
  }

  const json& layers = top.require("layers");
  if (!layers.is_array()) {
    top.fail(ModelErrorCode::bad_value, "layers must be an array");
  }
  if (layers.empty()) {
    throw ModelError(ModelErrorCode::no_layers, "no layers",
                     detail::line_of_offset(manifest_text,
                                            manifest_text.find("\"layers\"")));
  }
  const std::vector<int> lines = detail::layer_lines(manifest_text);

  const std::size_t blob_elems = weight_blob.size() / 4;
  std::size_t declared = 0;
  Shape cur = model.input_shape;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const json& lj = layers[li];
    const int line = li < lines.size() ? lines[li] : 0;
    std::string id = "layer" + std::to_string(li);
    if (lj.is_object() && lj.contains("name") && lj.at("name").is_string()) {
      id = lj.at("name").get<std::string>();
    }
    const detail::ManifestReader r(lj, line, id);
    if (!lj.is_object()) r.fail(ModelErrorCode::malformed, "layer must be an object");

    LayerSpec l;
    l.id = id;
    l.line = line;
    const std::string kind = r.string(r.require("kind"), "kind");
    const json& dims = r.require("dims");
    if (!dims.is_object()) r.fail(ModelErrorCode::bad_value, "dims must be an object");
    const detail::ManifestReader d(dims, line, id);
    if (kind == "dense") {
      l.kind = LayerKind::dense;
      l.in_features = d.positive_int(d.require("in"), "dims.in");
      l.out_features = d.positive_int(d.require("out"), "dims.out");
    } else if (kind == "conv2d") {
      l.kind = LayerKind::conv2d;
      l.conv.in_channels = d.positive_int(d.require("in_channels"), "dims.in_channels");
      l.conv.out_channels = d.positive_int(d.require("out_channels"), "dims.out_channels");
      std::tie(l.conv.kernel_h, l.conv.kernel_w) = d.pair(d.require("kernel"), "dims.kernel");
      if (d.has("stride")) {
        std::tie(l.conv.stride_h, l.conv.stride_w) = d.pair(dims.at("stride"), "dims.stride");
      }
      if (d.has("padding")) {
        std::tie(l.conv.pad_h, l.conv.pad_w) =
            d.pair(dims.at("padding"), "dims.padding", true);
      }
    } else {
      r.fail(ModelErrorCode::bad_value, "unknown layer kind '" + kind + "'");
    }

    l.activation = r.guarded([&] {
      return parse_af_kind(r.string(r.require("activation"), "activation"));
    });
    l.weight_offset = r.offset(r.require("weight_offset"), "weight_offset");
    if (r.has("bias_offset")) {
      l.bias_offset = r.offset(lj.at("bias_offset"), "bias_offset");
    }
    if (r.has("mode_hint")) {
      l.mode_hint = r.guarded([&] {
        return parse_mac_kind(r.string(lj.at("mode_hint"), "mode_hint"));
      });
    }

    // Shape chaining.
    l.in_shape = cur;
    if (l.kind == LayerKind::dense) {
      if (static_cast<std::size_t>(l.in_features) != cur.size()) {
        r.fail(ModelErrorCode::shape_mismatch,
               "dense input " + std::to_string(l.in_features) +
                   " does not match previous output " + cur.to_string() +
                   " (" + std::to_string(cur.size()) + " values)");
      }
      l.mac_shape = {l.out_features, 1, 1};
    } else {
      if (l.conv.in_channels != cur.c) {
        r.fail(ModelErrorCode::shape_mismatch,
               "conv2d expects " + std::to_string(l.conv.in_channels) +
                   " input channels, previous output is " + cur.to_string());
      }
      if (cur.h + 2 * l.conv.pad_h < l.conv.kernel_h ||
          cur.w + 2 * l.conv.pad_w < l.conv.kernel_w) {
        r.fail(ModelErrorCode::shape_mismatch,
               "kernel larger than padded input " + cur.to_string());
      }
      l.mac_shape = detail::conv_output(cur, l.conv);
    }
    l.out_shape = l.mac_shape;

    if (r.has("pool")) {
      const json& pj = lj.at("pool");
      const detail::ManifestReader p(pj, line, id);
      if (!pj.is_object()) r.fail(ModelErrorCode::bad_value, "pool must be an object");
      PoolSpec ps;
      ps.kind = p.guarded([&] { return parse_pool_kind(p.string(p.require("kind"), "pool.kind")); });
      std::tie(ps.window_h, ps.window_w) = p.pair(p.require("window"), "pool.window");
      ps.stride_h = ps.window_h;
      ps.stride_w = ps.window_w;
      if (p.has("stride")) {
        std::tie(ps.stride_h, ps.stride_w) = p.pair(pj.at("stride"), "pool.stride");
      }
      if (ps.window_h > l.mac_shape.h || ps.window_w > l.mac_shape.w) {
        r.fail(ModelErrorCode::shape_mismatch,
               "pool window " + std::to_string(ps.window_h) + "x" +
                   std::to_string(ps.window_w) + " does not fit map " +
                   l.mac_shape.to_string());
      }
      l.pool = ps;
      l.out_shape = detail::pool_output(l.mac_shape, ps);
    }
    if (r.has("norm")) {
      const json& nj = lj.at("norm");
      const detail::ManifestReader n(nj, line, id);
      if (!nj.is_object()) r.fail(ModelErrorCode::bad_value, "norm must be an object");
      l.norm = NormOffsets{n.offset(n.require("scale_offset"), "norm.scale_offset"),
                           n.offset(n.require("shift_offset"), "norm.shift_offset")};
    }

    // Tensor slices.
    LayerTensors t;
    auto slice = [&](std::size_t off, std::size_t count, const char* what) {
      if (off > blob_elems || count > blob_elems - off) {
        r.fail(ModelErrorCode::offset_out_of_range,
               std::string(what) + " [" + std::to_string(off) + ", " +
                   std::to_string(off + count) + ") exceeds the " +
                   std::to_string(blob_elems) + "-element weight blob");
      }
      declared += count;
      return detail::decode_f32_le(weight_blob.subspan(off * 4, count * 4));
    };
    t.weights = slice(l.weight_offset, l.weight_count(), "weights");
    if (l.bias_offset) t.bias = slice(*l.bias_offset, l.bias_count(), "bias");
    if (l.norm) {
      const auto c = static_cast<std::size_t>(l.out_shape.c);
      t.norm_scale = slice(l.norm->scale_offset, c, "norm scale");
      t.norm_shift = slice(l.norm->shift_offset, c, "norm shift");
    }
    for (const auto* v : {&t.weights, &t.bias, &t.norm_scale, &t.norm_shift}) {
      for (double x : *v) {
        if (!std::isfinite(x)) {
          r.fail(ModelErrorCode::bad_value, "non-finite value in weight blob");
        }
      }
    }

    cur = l.out_shape;
    model.layers.push_back(std::move(l));
    model.tensors.push_back(std::move(t));
  }

  if (weight_blob.size() % 4 != 0 || declared != blob_elems) {
    throw ModelError(ModelErrorCode::length_mismatch,
                     "weight blob holds " + std::to_string(weight_blob.size()) +
                         " bytes but the manifest declares " +
                         std::to_string(declared) + " float32 values (" +
                         std::to_string(declared * 4) + " bytes)");
  }
  return model;
}

inline std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Model load_model_files(const std::string& manifest_path,
                              const std::string& weights_path) {
  const std::string text = read_text_file(manifest_path);
  const std::vector<std::uint8_t> blob = read_binary_file(weights_path);
  return load_manifest(text, blob);
}

// ---------------------------------------------------------------------------
// Tensor files: one ASCII header line "shape d0 d1 ...\n" followed by the
// row-major little-endian float32 payload. d0 is the sample count.

struct TensorFile {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t samples() const { return shape.empty() ? 0 : shape.front(); }
  std::size_t sample_size() const {
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
  }
  std::vector<double> sample(std::size_t i) const {
    const std::size_t n = sample_size();
    return {data.begin() + static_cast<long>(i * n),
            data.begin() + static_cast<long>((i + 1) * n)};
  }
  std::vector<std::vector<double>> all_samples() const {
    std::vector<std::vector<double>> out;
    out.reserve(samples());
    for (std::size_t i = 0; i < samples(); ++i) out.push_back(sample(i));
    return out;
  }
};

inline TensorFile parse_tensor_blob(std::span<const std::uint8_t> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end()) throw IoError("tensor file has no header line");
  const std::string header(bytes.begin(), nl);
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  if (tag != "shape") throw IoError("tensor header must start with 'shape'");
  TensorFile t;
  long long d = 0;
  std::size_t count = 1;
  while (hs >> d) {
    if (d <= 0) throw IoError("tensor dimensions must be positive");
    t.shape.push_back(static_cast<std::size_t>(d));
    count *= static_cast<std::size_t>(d);
  }
  if (!hs.eof() || t.shape.empty()) throw IoError("malformed tensor header '" + header + "'");
  const auto payload = bytes.subspan(static_cast<std::size_t>(nl - bytes.begin()) + 1);
  if (payload.size() != count * 4) {
    throw IoError("tensor payload holds " + std::to_string(payload.size()) +
                  " bytes, header declares " + std::to_string(count * 4));
  }
  t.data = detail::decode_f32_le(payload);
  return t;
}

inline TensorFile read_tensor_file(const std::string& path) {
  try {
    return parse_tensor_blob(read_binary_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

inline void write_tensor_file(const std::string& path,
                              const std::vector<std::size_t>& shape,
                              std::span<const double> data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << "shape";
  for (std::size_t d : shape) f << ' ' << d;
  f << '\n';
  for (double v : data) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>(u >> 24)};
    f.write(b, 4);
  }
}

/// One integer class label per line.
inline std::vector<int> read_labels(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<int> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(line, &used));
      if (line.find_first_not_of(" \r\t", used) != std::string::npos) throw IoError("");
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(n) + ": not an integer label");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Double-precision reference.

/// Per-layer intermediate values from a reference forward pass.
struct OracleTrace {
  std::vector<double> preact;
  std::vector<double> act;
  std::vector<double> out;
};

namespace exact {

inline double pool_window(std::span<const double> v, PoolKind kind) {
  if (kind == PoolKind::max) return *std::max_element(v.begin(), v.end());
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  if (kind == PoolKind::avg) return mu;
  double d = 0.0;
  for (double x : v) d += std::fabs(x - mu);
  return mu + d / static_cast<double>(v.size());
}

inline std::vector<double> pool_map(std::span<const double> in, const Shape& s,
                                    const PoolSpec& p) {
  const Shape o = detail::pool_output(s, p);
  std::vector<double> out(o.size());
  std::vector<double> win(static_cast<std::size_t>(p.window_size()));
  for (int c = 0; c < o.c; ++c) {
    for (int y = 0; y < o.h; ++y) {
      for (int x = 0; x < o.w; ++x) {
        std::size_t k = 0;
        for (int dy = 0; dy < p.window_h; ++dy) {
          for (int dx = 0; dx < p.window_w; ++dx) {
            const int iy = y * p.stride_h + dy;
            const int ix = x * p.stride_w + dx;
            win[k++] = in[(static_cast<std::size_t>(c) * s.h + iy) * s.w + ix];
          }
        }
        out[(static_cast<std::size_t>(c) * o.h + y) * o.w + x] =
            pool_window(win, p.kind);
      }
    }
  }
  return out;
}

}  // namespace exact

/// Reference forward pass; `visit(layer_index, trace)` sees every layer.
inline std::vector<double> oracle_forward(
    const Model& model, std::span<const double> input,
    const std::function<void(std::size_t, const OracleTrace&)>& visit = {}) {
  if (input.size() != model.input_shape.size()) {
    throw ModelError(ModelErrorCode::shape_mismatch,
                     "input has " + std::to_string(input.size()) +
                         " values, model expects " +
                         std::to_string(model.input_shape.size()));
  }
  std::vector<double> cur(input.begin(), input.end());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    const LayerTensors& t = model.tensors[li];
    OracleTrace tr;
    tr.preact.assign(l.mac_shape.size(), 0.0);
    if (l.kind == LayerKind::dense) {
      for (int o = 0; o < l.out_features; ++o) {
        double acc = t.bias.empty() ? 0.0 : t.bias[static_cast<std::size_t>(o)];
        const double* w = &t.weights[static_cast<std::size_t>(o) * l.in_features];
        for (int i = 0; i < l.in_features; ++i) acc += w[i] * cur[static_cast<std::size_t>(i)];
        tr.preact[static_cast<std::size_t>(o)] = acc;
      }
    } else {
      const ConvGeometry& g = l.conv;
      const Shape& in = l.in_shape;
      const Shape& os = l.mac_shape;
      for (int oc = 0; oc < os.c; ++oc) {
        for (int oy = 0; oy < os.h; ++oy) {
          for (int ox = 0; ox < os.w; ++ox) {
            double acc = t.bias.empty() ? 0.0 : t.bias[static_cast<std::size_t>(oc)];
            for (int ic = 0; ic < g.in_channels; ++ic) {
              for (int ky = 0; ky < g.kernel_h; ++ky) {
                for (int kx = 0; kx < g.kernel_w; ++kx) {
                  const int iy = oy * g.stride_h + ky - g.pad_h;
                  const int ix = ox * g.stride_w + kx - g.pad_w;
                  if (iy < 0 || ix < 0 || iy >= in.h || ix >= in.w) continue;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(oc) * g.in_channels + ic) * g.kernel_h + ky) *
                          g.kernel_w + kx;
                  acc += t.weights[wi] *
                         cur[(static_cast<std::size_t>(ic) * in.h + iy) * in.w + ix];
                }
              }
            }
            tr.preact[(static_cast<std::size_t>(oc) * os.h + oy) * os.w + ox] = acc;
          }
        }
      }
    }
    tr.act = exact::apply(l.activation, tr.preact);
    if (l.pool) tr.act = exact::pool_map(tr.act, l.mac_shape, *l.pool);
    tr.out = tr.act;
    if (l.norm) {
      const std::size_t plane =
          static_cast<std::size_t>(l.out_shape.h) * l.out_shape.w;
      for (std::size_t i = 0; i < tr.out.size(); ++i) {
        const std::size_t c = i / plane;
        tr.out[i] = t.norm_scale[c] * tr.out[i] + t.norm_shift[c];
      }
    }
    if (visit) visit(li, tr);
    cur = tr.out;
  }
  return cur;
}

/// Executes the model in double precision on the un-quantized weights with
/// exact library activations.
inline std::vector<double> oracle_infer(const Model& model,
                                        std::span<const double> input) {
  return oracle_forward(model, input);
}

// ---------------------------------------------------------------------------
// Calibration.

/// frac_bits = width - 1 - ceil(log2(max_abs + eps)), clamped to
/// [0, width-1], then lowered while max_abs would still round past the
/// largest raw value.
inline FxPFormat calibrated_format(double max_abs, int width) {
  constexpr double kEps = 1e-12;
  const int ib = static_cast<int>(std::ceil(std::log2(max_abs + kEps)));
  int frac = std::clamp(width - 1 - ib, 0, width - 1);
  FxPFormat fmt{width, frac};
  while (fmt.frac_bits > 0 &&
         std::nearbyint(std::ldexp(max_abs, fmt.frac_bits)) >
             static_cast<double>(fmt.max_raw())) {
    --fmt.frac_bits;
  }
  return fmt;
}

namespace detail {

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline std::vector<FxPWord> quantize_all(std::span<const double> v,
                                         const FxPFormat& fmt) {
  std::vector<FxPWord> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(quantize(x, fmt));
  return out;
}

}  // namespace detail

/// Chooses a format per tensor from max-abs ranges (weights directly,
/// activations over the calibration set through the reference pass) and
/// quantizes every parameter tensor.
inline Model calibrate_formats(const Model& model,
                               std::span<const std::vector<double>> calib_inputs,
                               int width) {
  if (width != 8 && width != 16) {
    throw ContractViolation("engine width must be 8 or 16, got " +
                            std::to_string(width));
  }
  if (calib_inputs.empty()) {
    throw ContractViolation("calibration needs at least one input");
  }
  const std::size_t n = model.layers.size();
  double in_max = 0.0;
  std::vector<double> pre_max(n, 0.0);
  std::vector<double> act_max(n, 0.0);
  std::vector<double> out_max(n, 0.0);
  for (const auto& x : calib_inputs) {
    in_max = std::max(in_max, detail::max_abs(x));
    oracle_forward(model, x, [&](std::size_t li, const OracleTrace& tr) {
      pre_max[li] = std::max(pre_max[li], detail::max_abs(tr.preact));
      const double post_af = detail::max_abs(
          exact::apply(model.layers[li].activation, tr.preact));
      act_max[li] = std::max({act_max[li], post_af, detail::max_abs(tr.act)});
      out_max[li] = std::max(out_max[li], detail::max_abs(tr.out));
    });
  }

  Model q = model;
  q.width = width;
  q.input_format = calibrated_format(in_max, width);
  q.formats.clear();
  q.quantized.clear();
  for (std::size_t li = 0; li < n; ++li) {
    const LayerSpec& l = model.layers[li];
    const LayerTensors& t = model.tensors[li];
    LayerFormats f;
    f.weight = calibrated_format(detail::max_abs(t.weights), width);
    f.bias = calibrated_format(detail::max_abs(t.bias), width);
    f.preact = calibrated_format(pre_max[li], width);
    f.act = calibrated_format(act_max[li], width);
    f.norm_scale = calibrated_format(detail::max_abs(t.norm_scale), width);
    f.norm_shift = calibrated_format(detail::max_abs(t.norm_shift), width);
    f.out = l.norm ? calibrated_format(out_max[li], width) : f.act;
    QuantizedLayer ql;
    ql.weights = detail::quantize_all(t.weights, f.weight);
    ql.bias = detail::quantize_all(t.bias, f.bias);
    ql.norm.scale = detail::quantize_all(t.norm_scale, f.norm_scale);
    ql.norm.shift = detail::quantize_all(t.norm_shift, f.norm_shift);
    q.formats.push_back(f);
    q.quantized.push_back(std::move(ql));
  }
  return q;
}

}  // namespace carmen
