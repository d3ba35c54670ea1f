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
#ifndef UTOE_MODEL_IR_HPP_
#define UTOE_MODEL_IR_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace utoe {

// Raised when a model document is not syntactically valid.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a structurally valid document violates a graph invariant.
// The message names the offending tensor or node.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by shape inference; carries the node id and the conflicting shapes.
class ShapeMismatch : public std::runtime_error {
 public:
  ShapeMismatch(std::string node_id, const std::string& detail);
  const std::string& node_id() const { return node_id_; }

 private:
  std::string node_id_;
};

enum class DType : uint8_t { kInt8, kInt32, kFp32 };

int dtype_width(DType dtype);
const char* dtype_name(DType dtype);
DType dtype_from_name(const std::string& name);

enum class TensorKind : uint8_t { kInput, kOutput, kParam, kIntermediate };

const char* tensor_kind_name(TensorKind kind);
TensorKind tensor_kind_from_name(const std::string& name);

// Affine quantization: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

struct TensorSpec {
  std::string id;
  DType dtype = DType::kFp32;
  std::vector<int64_t> shape;  // empty until inferred for non-param tensors
  TensorKind kind = TensorKind::kIntermediate;
  std::optional<QuantParams> quant;

  bool has_shape() const { return !shape.empty(); }
  int64_t element_count() const;
  int64_t byte_size() const { return element_count() * dtype_width(dtype); }

  bool operator==(const TensorSpec&) const = default;
};

enum class OpKind : uint8_t {
  kDense,
  kConv2d,
  kAdd,
  kRelu,
  kMaxPool2d,
  kAvgPool2d,
  kReshape,
  kSoftmax,
  kQuantize,
  kDequantize,
};

const char* op_kind_name(OpKind kind);
OpKind op_kind_from_name(const std::string& name);

// True for the boundary representation converters that carry no compute of
// their own (they fold into adjacent kernels during fusion).
bool is_conversion_op(OpKind kind);

using AttrValue = std::variant<int64_t, std::vector<int64_t>>;

struct OperatorNode {
  std::string id;
  OpKind kind = OpKind::kRelu;
  std::vector<std::string> inputs;   // tensor ids, order significant
  std::vector<std::string> outputs;  // tensor ids
  std::map<std::string, AttrValue> attrs;

  int64_t attr_int(const std::string& key, int64_t fallback = 0) const;
  std::vector<int64_t> attr_ints(const std::string& key) const;

  bool operator==(const OperatorNode&) const = default;
};

struct ModelGraph {
  std::string name;
  std::vector<OperatorNode> nodes;  // topological order, validated on load
  std::vector<TensorSpec> tensors;  // declaration order
  std::map<std::string, std::vector<uint8_t>> param_data;

  const TensorSpec* find_tensor(const std::string& id) const;
  TensorSpec* find_tensor(const std::string& id);
  const TensorSpec& tensor(const std::string& id) const;  // throws ValidationError

  // Index of the node producing `tensor_id`, or -1 for inputs/params.
  int producer_index(const std::string& tensor_id) const;
  std::vector<int> consumer_indices(const std::string& tensor_id) const;

  std::vector<std::string> input_ids() const;
  std::vector<std::string> output_ids() const;

  // Param tensor ids in traversal order (the order in which node inputs first
  // reference them); index i gets the name "p<i>".
  std::vector<std::string> param_order() const;
  std::map<std::string, std::string> param_names() const;  // tensor id -> p-name

  bool operator==(const ModelGraph&) const = default;
};

// Parses and validates a model document (UTF-8 JSON, see README for the
// schema). Throws ParseError or ValidationError.
ModelGraph load_model(const std::string& document);
ModelGraph load_model_file(const std::string& path);

// Serializes a graph to the same document format. load_model(save_model(g))
// reproduces g field for field.
std::string save_model(const ModelGraph& graph);

// Checks every ModelGraph invariant: arity per op kind, referenced tensors
// exist, topological node order over a DAG, dtype rules, quantization
// metadata presence, param blob sizes. Throws ValidationError.
void validate(const ModelGraph& graph);

// Fills intermediate/output shapes from the graph inputs via per-kind
// propagation rules; verifies declared shapes where present.
ModelGraph infer_shapes(ModelGraph graph);

// Multiply-accumulate count of one node (dense/conv2d); zero for the rest.
// Requires inferred shapes.
int64_t macs_of(const OperatorNode& node, const ModelGraph& graph);

// Element-op count for the 0-MAC kinds (output element count); zero for
// dense/conv2d, whose work is carried by macs_of.
int64_t elements_of(const OperatorNode& node, const ModelGraph& graph);

}  // namespace utoe

#endif  // UTOE_MODEL_IR_HPP_
