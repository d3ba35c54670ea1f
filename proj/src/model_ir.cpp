/* Copyright 2026 The utoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "utoe/model_ir.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace utoe {

using nlohmann::json;

ShapeMismatch::ShapeMismatch(std::string node_id, const std::string& detail)
    : std::runtime_error("shape mismatch at node '" + node_id + "': " + detail),
      node_id_(std::move(node_id)) {}

int dtype_width(DType dtype) {
  switch (dtype) {
    case DType::kInt8:
      return 1;
    case DType::kInt32:
      return 4;
    case DType::kFp32:
      return 4;
  }
  return 0;
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kInt8:
      return "int8";
    case DType::kInt32:
      return "int32";
    case DType::kFp32:
      return "fp32";
  }
  return "?";
}

DType dtype_from_name(const std::string& name) {
  if (name == "int8") return DType::kInt8;
  if (name == "int32") return DType::kInt32;
  if (name == "fp32") return DType::kFp32;
  throw ParseError("unknown dtype '" + name + "'");
}

const char* tensor_kind_name(TensorKind kind) {
  switch (kind) {
    case TensorKind::kInput:
      return "input";
    case TensorKind::kOutput:
      return "output";
    case TensorKind::kParam:
      return "param";
    case TensorKind::kIntermediate:
      return "intermediate";
  }
  return "?";
}

TensorKind tensor_kind_from_name(const std::string& name) {
  if (name == "input") return TensorKind::kInput;
  if (name == "output") return TensorKind::kOutput;
  if (name == "param") return TensorKind::kParam;
  if (name == "intermediate") return TensorKind::kIntermediate;
  throw ParseError("unknown tensor kind '" + name + "'");
}

namespace {

struct OpKindInfo {
  OpKind kind;
  const char* name;
  int arity_in;
};

constexpr OpKindInfo kOpKinds[] = {
    {OpKind::kDense, "dense", 2},       {OpKind::kConv2d, "conv2d", 2},
    {OpKind::kAdd, "add", 2},           {OpKind::kRelu, "relu", 1},
    {OpKind::kMaxPool2d, "maxpool2d", 1}, {OpKind::kAvgPool2d, "avgpool2d", 1},
    {OpKind::kReshape, "reshape", 1},   {OpKind::kSoftmax, "softmax", 1},
    {OpKind::kQuantize, "quantize", 1}, {OpKind::kDequantize, "dequantize", 1},
};

const OpKindInfo& op_info(OpKind kind) {
  for (const auto& info : kOpKinds) {
    if (info.kind == kind) return info;
  }
  throw std::logic_error("bad op kind");
}

}  // namespace

const char* op_kind_name(OpKind kind) { return op_info(kind).name; }

OpKind op_kind_from_name(const std::string& name) {
  for (const auto& info : kOpKinds) {
    if (name == info.name) return info.kind;
  }
  throw ParseError("unknown operator kind '" + name + "'");
}

bool is_conversion_op(OpKind kind) {
  return kind == OpKind::kQuantize || kind == OpKind::kDequantize;
}

int64_t TensorSpec::element_count() const {
  if (shape.empty()) return 0;
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

int64_t OperatorNode::attr_int(const std::string& key, int64_t fallback) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (const auto* v = std::get_if<int64_t>(&it->second)) return *v;
  throw ValidationError("node '" + id + "': attribute '" + key + "' is not an integer");
}

std::vector<int64_t> OperatorNode::attr_ints(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) return {};
  if (const auto* v = std::get_if<std::vector<int64_t>>(&it->second)) return *v;
  throw ValidationError("node '" + id + "': attribute '" + key + "' is not an integer list");
}

const TensorSpec* ModelGraph::find_tensor(const std::string& id) const {
  for (const auto& t : tensors) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

TensorSpec* ModelGraph::find_tensor(const std::string& id) {
  for (auto& t : tensors) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

const TensorSpec& ModelGraph::tensor(const std::string& id) const {
  const TensorSpec* t = find_tensor(id);
  if (!t) throw ValidationError("unknown tensor id '" + id + "'");
  return *t;
}

int ModelGraph::producer_index(const std::string& tensor_id) const {
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& out : nodes[i].outputs) {
      if (out == tensor_id) return static_cast<int>(i);
    }
  }
  return -1;
}

std::vector<int> ModelGraph::consumer_indices(const std::string& tensor_id) const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) {
      if (in == tensor_id) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> ModelGraph::input_ids() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    if (t.kind == TensorKind::kInput) out.push_back(t.id);
  }
  return out;
}

std::vector<std::string> ModelGraph::output_ids() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    if (t.kind == TensorKind::kOutput) out.push_back(t.id);
  }
  return out;
}

std::vector<std::string> ModelGraph::param_order() const {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& node : nodes) {
    for (const auto& in : node.inputs) {
      const TensorSpec* t = find_tensor(in);
      if (t && t->kind == TensorKind::kParam && seen.insert(in).second) {
        order.push_back(in);
      }
    }
  }
  // Unreferenced params keep a stable name at the tail, in declaration order.
  for (const auto& t : tensors) {
    if (t.kind == TensorKind::kParam && seen.insert(t.id).second) {
      order.push_back(t.id);
    }
  }
  return order;
}

std::map<std::string, std::string> ModelGraph::param_names() const {
  std::map<std::string, std::string> names;
  auto order = param_order();
  for (size_t i = 0; i < order.size(); ++i) {
    names[order[i]] = "p" + std::to_string(i);
  }
  return names;
}

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<uint8_t>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= data.size()) {
    uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  size_t rest = data.size() - i;
  if (rest == 1) {
    uint32_t v = data[i] << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<uint8_t> base64_decode(const std::string& text, const std::string& what) {
  if (text.size() % 4 != 0) {
    throw ParseError("param '" + what + "': base64 length not a multiple of 4");
  }
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) {
          throw ParseError("param '" + what + "': misplaced base64 padding");
        }
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw ParseError("param '" + what + "': data after base64 padding");
      int d = b64_value(c);
      if (d < 0) throw ParseError("param '" + what + "': invalid base64 character");
      v = (v << 6) | static_cast<uint32_t>(d);
    }
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<uint8_t>(v & 0xff));
  }
  return out;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ",";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(where + ": missing key '" + key + "'");
  }
  return *it;
}

}  // namespace

ModelGraph load_model(const std::string& document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("model document root must be an object");

  ModelGraph graph;
  try {
    graph.name = require_key(doc, "name", "model").get<std::string>();

    for (const auto& jt : require_key(doc, "tensors", "model")) {
      TensorSpec t;
      const std::string where = "tensor '" + jt.value("id", std::string("?")) + "'";
      t.id = require_key(jt, "id", where).get<std::string>();
      t.dtype = dtype_from_name(require_key(jt, "dtype", where).get<std::string>());
      t.shape = require_key(jt, "shape", where).get<std::vector<int64_t>>();
      t.kind = tensor_kind_from_name(require_key(jt, "kind", where).get<std::string>());
      if (jt.contains("scale") || jt.contains("zero_point")) {
        QuantParams q;
        q.scale = require_key(jt, "scale", where).get<double>();
        q.zero_point = require_key(jt, "zero_point", where).get<int32_t>();
        t.quant = q;
      }
      graph.tensors.push_back(std::move(t));
    }

    for (const auto& jn : require_key(doc, "nodes", "model")) {
      OperatorNode n;
      const std::string where = "node '" + jn.value("id", std::string("?")) + "'";
      n.id = require_key(jn, "id", where).get<std::string>();
      n.kind = op_kind_from_name(require_key(jn, "kind", where).get<std::string>());
      n.inputs = require_key(jn, "inputs", where).get<std::vector<std::string>>();
      n.outputs = require_key(jn, "outputs", where).get<std::vector<std::string>>();
      if (jn.contains("attrs")) {
        for (const auto& [key, value] : jn.at("attrs").items()) {
          if (value.is_array()) {
            n.attrs[key] = value.get<std::vector<int64_t>>();
          } else if (value.is_number_integer()) {
            n.attrs[key] = value.get<int64_t>();
          } else {
            throw ParseError(where + ": attribute '" + key + "' must be an int or int list");
          }
        }
      }
      graph.nodes.push_back(std::move(n));
    }

    for (const auto& [id, blob] : require_key(doc, "params", "model").items()) {
      graph.param_data[id] = base64_decode(blob.get<std::string>(), id);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  }

  validate(graph);
  return graph;
}

ModelGraph load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open model file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_model(buffer.str());
}

std::string save_model(const ModelGraph& graph) {
  json doc;
  doc["name"] = graph.name;
  json tensors = json::array();
  for (const auto& t : graph.tensors) {
    json jt;
    jt["id"] = t.id;
    jt["dtype"] = dtype_name(t.dtype);
    jt["shape"] = t.shape;
    jt["kind"] = tensor_kind_name(t.kind);
    if (t.quant) {
      jt["scale"] = t.quant->scale;
      jt["zero_point"] = t.quant->zero_point;
    }
    tensors.push_back(std::move(jt));
  }
  doc["tensors"] = std::move(tensors);

  json nodes = json::array();
  for (const auto& n : graph.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["kind"] = op_kind_name(n.kind);
    jn["inputs"] = n.inputs;
    jn["outputs"] = n.outputs;
    if (!n.attrs.empty()) {
      json attrs;
      for (const auto& [key, value] : n.attrs) {
        if (const auto* v = std::get_if<int64_t>(&value)) {
          attrs[key] = *v;
        } else {
          attrs[key] = std::get<std::vector<int64_t>>(value);
        }
      }
      jn["attrs"] = std::move(attrs);
    }
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(nodes);

  json params = json::object();
  for (const auto& [id, blob] : graph.param_data) {
    params[id] = base64_encode(blob);
  }
  doc["params"] = std::move(params);
  return doc.dump(2);
}

namespace {

void validate_node_dtypes(const ModelGraph& graph, const OperatorNode& node) {
  auto dt = [&](const std::string& id) { return graph.tensor(id).dtype; };
  const DType out = dt(node.outputs[0]);
  const std::string who = "node '" + node.id + "'";
  switch (node.kind) {
    case OpKind::kQuantize:
      if (dt(node.inputs[0]) != DType::kFp32 || out != DType::kInt8) {
        throw ValidationError(who + ": quantize must map fp32 to int8");
      }
      break;
    case OpKind::kDequantize:
      if (dt(node.inputs[0]) == DType::kFp32 || out != DType::kFp32) {
        throw ValidationError(who + ": dequantize must map int8/int32 to fp32");
      }
      break;
    case OpKind::kDense:
    case OpKind::kConv2d: {
      DType a = dt(node.inputs[0]), w = dt(node.inputs[1]);
      bool quantized = a == DType::kInt8 && w == DType::kInt8 && out == DType::kInt32;
      bool real = a == DType::kFp32 && w == DType::kFp32 && out == DType::kFp32;
      if (!quantized && !real) {
        throw ValidationError(who + ": expects int8*int8->int32 or fp32*fp32->fp32");
      }
      break;
    }
    case OpKind::kAdd: {
      DType a = dt(node.inputs[0]), b = dt(node.inputs[1]);
      bool ok = (a == DType::kFp32 && b == DType::kFp32 && out == DType::kFp32) ||
                (a == DType::kInt32 && b == DType::kInt32 &&
                 (out == DType::kInt32 || out == DType::kInt8)) ||
                (a == DType::kInt8 && b == DType::kInt8 && out == DType::kInt8);
      if (!ok) throw ValidationError(who + ": unsupported add dtype combination");
      break;
    }
    case OpKind::kSoftmax:
      if (dt(node.inputs[0]) != DType::kFp32 || out != DType::kFp32) {
        throw ValidationError(who + ": softmax supports fp32 only");
      }
      break;
    default:
      if (dt(node.inputs[0]) != out) {
        throw ValidationError(who + ": output dtype must match input dtype");
      }
      break;
  }
}

}  // namespace

void validate(const ModelGraph& graph) {
  std::set<std::string> tensor_ids;
  for (const auto& t : graph.tensors) {
    if (!tensor_ids.insert(t.id).second) {
      throw ValidationError("duplicate tensor id '" + t.id + "'");
    }
    for (int64_t d : t.shape) {
      if (d < 1) {
        throw ValidationError("tensor '" + t.id + "': shape dimension < 1");
      }
    }
    if (t.dtype == DType::kInt8 && !t.quant) {
      throw ValidationError("tensor '" + t.id + "': int8 tensor requires quant metadata");
    }
    if (t.dtype == DType::kFp32 && t.quant) {
      throw ValidationError("tensor '" + t.id + "': fp32 tensor must not carry quant metadata");
    }
    if (t.quant) {
      if (!(t.quant->scale > 0)) {
        throw ValidationError("tensor '" + t.id + "': quant scale must be positive");
      }
      if (t.quant->zero_point < -128 || t.quant->zero_point > 127) {
        throw ValidationError("tensor '" + t.id + "': zero_point outside [-128,127]");
      }
    }
    if (t.kind == TensorKind::kInput || t.kind == TensorKind::kOutput) {
      if (t.dtype != DType::kFp32) {
        throw ValidationError("tensor '" + t.id + "': graph inputs and outputs must be fp32");
      }
      if (t.kind == TensorKind::kInput && !t.has_shape()) {
        throw ValidationError("tensor '" + t.id + "': graph input needs a concrete shape");
      }
    }
    if (t.kind == TensorKind::kParam && !t.has_shape()) {
      throw ValidationError("tensor '" + t.id + "': param needs a concrete shape");
    }
  }

  std::set<std::string> node_ids;
  std::map<std::string, int> produced_by;  // tensor id -> node index
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    if (!node_ids.insert(node.id).second) {
      throw ValidationError("duplicate node id '" + node.id + "'");
    }
    const auto& info = op_info(node.kind);
    if (static_cast<int>(node.inputs.size()) != info.arity_in || node.outputs.size() != 1) {
      throw ValidationError("node '" + node.id + "': " + info.name + " expects " +
                            std::to_string(info.arity_in) + " inputs and 1 output");
    }
    for (const auto& in : node.inputs) {
      if (!tensor_ids.count(in)) {
        throw ValidationError("node '" + node.id + "': references missing tensor id '" + in + "'");
      }
      const TensorSpec& t = graph.tensor(in);
      auto it = produced_by.find(in);
      bool available = t.kind == TensorKind::kInput || t.kind == TensorKind::kParam ||
                       (it != produced_by.end() && it->second < static_cast<int>(i));
      if (!available) {
        throw ValidationError("node '" + node.id + "': input '" + in +
                              "' is not available at this position (not a topological order)");
      }
    }
    for (const auto& out : node.outputs) {
      if (!tensor_ids.count(out)) {
        throw ValidationError("node '" + node.id + "': references missing tensor id '" + out + "'");
      }
      const TensorSpec& t = graph.tensor(out);
      if (t.kind == TensorKind::kInput || t.kind == TensorKind::kParam) {
        throw ValidationError("node '" + node.id + "': cannot write to " +
                              std::string(tensor_kind_name(t.kind)) + " tensor '" + out + "'");
      }
      if (!produced_by.emplace(out, static_cast<int>(i)).second) {
        throw ValidationError("tensor '" + out + "' has more than one producer");
      }
    }
    validate_node_dtypes(graph, node);
  }

  for (const auto& t : graph.tensors) {
    if (t.kind == TensorKind::kOutput && !produced_by.count(t.id)) {
      throw ValidationError("output tensor '" + t.id + "' is never produced");
    }
  }

  for (const auto& t : graph.tensors) {
    if (t.kind == TensorKind::kParam) {
      auto it = graph.param_data.find(t.id);
      if (it == graph.param_data.end()) {
        throw ValidationError("param tensor '" + t.id + "' has no data blob");
      }
      if (static_cast<int64_t>(it->second.size()) != t.byte_size()) {
        throw ValidationError("param tensor '" + t.id + "': blob size " +
                              std::to_string(it->second.size()) + " != expected " +
                              std::to_string(t.byte_size()));
      }
    }
  }
  for (const auto& [id, blob] : graph.param_data) {
    (void)blob;
    const TensorSpec* t = graph.find_tensor(id);
    if (!t || t->kind != TensorKind::kParam) {
      throw ValidationError("param_data entry '" + id + "' is not a param tensor");
    }
  }
}

namespace {

std::vector<int64_t> pool_output_shape(const OperatorNode& node,
                                       const std::vector<int64_t>& in,
                                       int64_t window_h, int64_t window_w) {
  if (in.size() != 4) {
    throw ShapeMismatch(node.id, "expected rank-4 NCHW input, got " + shape_str(in));
  }
  int64_t stride = node.attr_int("stride", 1);
  int64_t padding = node.attr_int("padding", 0);
  if (stride < 1) throw ShapeMismatch(node.id, "stride must be >= 1");
  int64_t h = (in[2] + 2 * padding - window_h) / stride + 1;
  int64_t w = (in[3] + 2 * padding - window_w) / stride + 1;
  if (in[2] + 2 * padding < window_h || in[3] + 2 * padding < window_w) {
    throw ShapeMismatch(node.id, "window larger than padded input " + shape_str(in));
  }
  return {in[0], in[1], h, w};
}

std::vector<int64_t> infer_node_shape(const ModelGraph& graph, const OperatorNode& node) {
  auto in_shape = [&](size_t i) -> const std::vector<int64_t>& {
    const TensorSpec& t = graph.tensor(node.inputs[i]);
    if (!t.has_shape()) {
      throw ShapeMismatch(node.id, "input '" + t.id + "' has no shape yet");
    }
    return t.shape;
  };

  switch (node.kind) {
    case OpKind::kDense: {
      const auto& x = in_shape(0);
      const auto& w = in_shape(1);
      if (x.size() != 2 || w.size() != 2) {
        throw ShapeMismatch(node.id, "dense expects rank-2 activation and weight");
      }
      if (x[1] != w[1]) {
        throw ShapeMismatch(node.id, "activation " + shape_str(x) +
                                         " vs weight " + shape_str(w) +
                                         " (inner dimensions differ)");
      }
      return {x[0], w[0]};
    }
    case OpKind::kConv2d: {
      const auto& x = in_shape(0);
      const auto& w = in_shape(1);
      if (x.size() != 4 || w.size() != 4) {
        throw ShapeMismatch(node.id, "conv2d expects rank-4 NCHW activation and OIHW weight");
      }
      if (x[1] != w[1]) {
        throw ShapeMismatch(node.id, "input channels " + std::to_string(x[1]) +
                                         " != weight channels " + std::to_string(w[1]));
      }
      int64_t stride = node.attr_int("stride", 1);
      int64_t padding = node.attr_int("padding", 0);
      if (stride < 1) throw ShapeMismatch(node.id, "stride must be >= 1");
      if (x[2] + 2 * padding < w[2] || x[3] + 2 * padding < w[3]) {
        throw ShapeMismatch(node.id, "kernel larger than padded input");
      }
      int64_t h = (x[2] + 2 * padding - w[2]) / stride + 1;
      int64_t ww = (x[3] + 2 * padding - w[3]) / stride + 1;
      return {x[0], w[0], h, ww};
    }
    case OpKind::kAdd: {
      const auto& a = in_shape(0);
      const auto& b = in_shape(1);
      if (a == b) return a;
      // Bias broadcast along axis 1 (dense features / conv channels).
      if (b.size() == 1 && a.size() >= 2 && b[0] == a[1]) return a;
      if (a.size() == 1 && b.size() >= 2 && a[0] == b[1]) return b;
      throw ShapeMismatch(node.id,
                          "cannot add " + shape_str(a) + " and " + shape_str(b));
    }
    case OpKind::kMaxPool2d:
    case OpKind::kAvgPool2d: {
      int64_t ph = node.attr_int("pool_h", node.attr_int("pool", 2));
      int64_t pw = node.attr_int("pool_w", node.attr_int("pool", 2));
      OperatorNode n = node;
      if (n.attrs.find("stride") == n.attrs.end()) n.attrs["stride"] = ph;
      return pool_output_shape(n, in_shape(0), ph, pw);
    }
    case OpKind::kReshape: {
      auto target = node.attr_ints("shape");
      if (target.empty()) {
        throw ShapeMismatch(node.id, "reshape requires a 'shape' attribute");
      }
      int64_t want = 1;
      for (int64_t d : target) {
        if (d < 1) throw ShapeMismatch(node.id, "reshape target dimension < 1");
        want *= d;
      }
      int64_t have = 1;
      for (int64_t d : in_shape(0)) have *= d;
      if (want != have) {
        throw ShapeMismatch(node.id, "reshape " + shape_str(in_shape(0)) + " -> " +
                                         shape_str(target) + " changes element count");
      }
      return target;
    }
    case OpKind::kRelu:
    case OpKind::kSoftmax:
    case OpKind::kQuantize:
    case OpKind::kDequantize:
      return in_shape(0);
  }
  throw std::logic_error("bad op kind");
}

}  // namespace

ModelGraph infer_shapes(ModelGraph graph) {
  for (const auto& node : graph.nodes) {
    auto inferred = infer_node_shape(graph, node);
    TensorSpec* out = graph.find_tensor(node.outputs[0]);
    if (out->has_shape() && out->shape != inferred) {
      throw ShapeMismatch(node.id, "declared " + shape_str(out->shape) +
                                       " vs inferred " + shape_str(inferred) +
                                       " for tensor '" + out->id + "'");
    }
    out->shape = std::move(inferred);
  }
  return graph;
}

int64_t macs_of(const OperatorNode& node, const ModelGraph& graph) {
  switch (node.kind) {
    case OpKind::kDense: {
      const auto& x = graph.tensor(node.inputs[0]).shape;
      const auto& w = graph.tensor(node.inputs[1]).shape;
      return x[0] * x[1] * w[0];
    }
    case OpKind::kConv2d: {
      const auto& w = graph.tensor(node.inputs[1]).shape;
      const auto& y = graph.tensor(node.outputs[0]).shape;
      // Kh * Kw * Cin * Cout * Hout * Wout (per batch element).
      return w[2] * w[3] * w[1] * y[1] * y[2] * y[3] * y[0];
    }
    default:
      return 0;
  }
}

int64_t elements_of(const OperatorNode& node, const ModelGraph& graph) {
  switch (node.kind) {
    case OpKind::kDense:
    case OpKind::kConv2d:
      return 0;
    default:
      return graph.tensor(node.outputs[0]).element_count();
  }
}

}  // namespace utoe
