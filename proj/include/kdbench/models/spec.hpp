#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "kdbench/core/error.hpp"

namespace kdb {

enum class Task { classification, sequence_labeling };

inline const char* task_name(Task t) {
  return t == Task::classification ? "classification" : "sequence_labeling";
}

inline Task parse_task(const std::string& s) {
  if (s == "classification" || s == "cls") return Task::classification;
  if (s == "sequence_labeling" || s == "seqlab" || s == "ner") return Task::sequence_labeling;
  throw ParameterError("unknown task '" + s + "'");
}

namespace detail {
inline void require_positive(std::size_t v, const char* field) {
  if (v == 0) throw ParameterError(std::string(field) + " must be positive");
}
inline void require_rate(float rate) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw ParameterError("dropout must be in [0, 1)");
}
}  // namespace detail

// Encoder-only Transformer (BERT layout without pooler or segment embeddings).
struct TransformerSpec {
  std::size_t attn_heads = 2;
  std::size_t layers = 2;
  std::size_t embed_dim = 128;
  std::size_t ffn_dim = 0;  // 0 means 4 * embed_dim
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t num_classes = 2;
  Task task = Task::classification;
  float dropout = 0.1f;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * embed_dim; }

  void validate() const {
    detail::require_positive(attn_heads, "attn_heads");
    detail::require_positive(layers, "layers");
    detail::require_positive(embed_dim, "embed_dim");
    detail::require_positive(vocab_size, "vocab_size");
    detail::require_positive(max_len, "max_len");
    detail::require_positive(num_classes, "num_classes");
    detail::require_rate(dropout);
    if (embed_dim % attn_heads != 0) throw ParameterError("embed_dim must be divisible by attn_heads");
    if (ffn() < embed_dim) throw ParameterError("ffn_dim must be >= embed_dim");
  }

  // Pruned-BERT configurations (heads, layers, width).
  static TransformerSpec preset(std::size_t heads, std::size_t layers, std::size_t width,
                                std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    TransformerSpec s;
    s.attn_heads = heads;
    s.layers = layers;
    s.embed_dim = width;
    s.vocab_size = vocab;
    s.max_len = max_len;
    s.num_classes = classes;
    s.task = task;
    return s;
  }
  static TransformerSpec bert_tiny(std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    return preset(2, 2, 128, vocab, max_len, classes, task);
  }
  static TransformerSpec bert_mini(std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    return preset(4, 4, 256, vocab, max_len, classes, task);
  }
  static TransformerSpec bert_small(std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    return preset(8, 4, 512, vocab, max_len, classes, task);
  }
  static TransformerSpec bert_base(std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    return preset(12, 12, 768, vocab, max_len, classes, task);
  }
  // Default desk-scale teacher.
  static TransformerSpec desk_teacher(std::size_t vocab, std::size_t max_len, std::size_t classes, Task task) {
    return preset(8, 4, 256, vocab, max_len, classes, task);
  }
};

// Embedding -> stacked BiLSTM -> one self-attention layer (with residual) -> linear head.
struct BiLstmSpec {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;  // per direction
  std::size_t lstm_layers = 1;
  std::size_t attn_heads = 1;
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t num_classes = 2;
  Task task = Task::classification;
  float dropout = 0.1f;

  void validate() const {
    detail::require_positive(embed_dim, "embed_dim");
    detail::require_positive(hidden_dim, "hidden_dim");
    detail::require_positive(lstm_layers, "lstm_layers");
    detail::require_positive(attn_heads, "attn_heads");
    detail::require_positive(vocab_size, "vocab_size");
    detail::require_positive(max_len, "max_len");
    detail::require_positive(num_classes, "num_classes");
    detail::require_rate(dropout);
    if ((2 * hidden_dim) % attn_heads != 0) {
      throw ParameterError("2 * hidden_dim must be divisible by attn_heads");
    }
  }
};

// Embedding + sinusoidal positions -> N residual depthwise-separable conv blocks -> head.
struct CnnSpec {
  std::size_t embed_dim = 64;
  std::size_t n_blocks = 2;
  std::size_t kernel_size = 3;
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t num_classes = 2;
  Task task = Task::classification;
  float dropout = 0.1f;

  void validate() const {
    detail::require_positive(embed_dim, "embed_dim");
    detail::require_positive(n_blocks, "n_blocks");
    detail::require_positive(kernel_size, "kernel_size");
    detail::require_positive(vocab_size, "vocab_size");
    detail::require_positive(max_len, "max_len");
    detail::require_positive(num_classes, "num_classes");
    detail::require_rate(dropout);
    if (kernel_size % 2 == 0) throw ParameterError("kernel_size must be odd");
  }
};

using ModelSpec = std::variant<TransformerSpec, BiLstmSpec, CnnSpec>;

enum class ModelFamily : unsigned char { transformer = 1, bilstm = 2, cnn = 3 };

inline ModelFamily family_of(const ModelSpec& spec) {
  return static_cast<ModelFamily>(spec.index() + 1);
}

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::transformer: return "transformer";
    case ModelFamily::bilstm: return "bilstm";
    case ModelFamily::cnn: return "cnn";
  }
  return "?";
}

inline void validate(const ModelSpec& spec) {
  std::visit([](const auto& s) { s.validate(); }, spec);
}

inline Task task_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.task; }, spec);
}
inline std::size_t vocab_size_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.vocab_size; }, spec);
}
inline std::size_t max_len_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.max_len; }, spec);
}
inline std::size_t num_classes_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.num_classes; }, spec);
}
inline std::size_t embed_dim_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.embed_dim; }, spec);
}
inline void set_dropout(ModelSpec& spec, float rate) {
  std::visit([rate](auto& s) { s.dropout = rate; }, spec);
}

}  // namespace kdb
