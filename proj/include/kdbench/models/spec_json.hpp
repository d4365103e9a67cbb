#pragma once

#include "kdbench/core/json_fields.hpp"
#include "kdbench/models/spec.hpp"

namespace kdb {

inline ModelFamily parse_family(const std::string& s) {
  if (s == "transformer") return ModelFamily::transformer;
  if (s == "bilstm") return ModelFamily::bilstm;
  if (s == "cnn") return ModelFamily::cnn;
  throw ParameterError("unknown model family '" + s + "' (expected transformer, bilstm or cnn)");
}

inline Json spec_to_json(const ModelSpec& spec) {
  Json j;
  j["family"] = family_name(family_of(spec));
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        j["vocab_size"] = s.vocab_size;
        j["max_len"] = s.max_len;
        j["num_classes"] = s.num_classes;
        j["task"] = task_name(s.task);
        j["dropout"] = s.dropout;
        j["embed_dim"] = s.embed_dim;
        if constexpr (std::is_same_v<S, TransformerSpec>) {
          j["attn_heads"] = s.attn_heads;
          j["layers"] = s.layers;
          j["ffn_dim"] = s.ffn_dim;
        } else if constexpr (std::is_same_v<S, BiLstmSpec>) {
          j["hidden_dim"] = s.hidden_dim;
          j["lstm_layers"] = s.lstm_layers;
          j["attn_heads"] = s.attn_heads;
        } else {
          j["n_blocks"] = s.n_blocks;
          j["kernel_size"] = s.kernel_size;
        }
      },
      spec);
  return j;
}

namespace detail {

template <class S>
void read_common_spec(JsonObject& o, S& s) {
  o.optional("vocab_size", s.vocab_size);
  o.optional("max_len", s.max_len);
  o.optional("num_classes", s.num_classes);
  o.optional("dropout", s.dropout);
  o.optional("embed_dim", s.embed_dim);
  std::string task = task_name(s.task);
  o.optional("task", task);
  try {
    s.task = parse_task(task);
  } catch (const ParameterError& e) {
    throw ConfigError("'" + o.path_of("task") + "': " + e.what());
  }
}

}  // namespace detail

// Fields left out keep their defaults; validation is left to the caller because
// runner configs fill vocab_size and num_classes from the data.
inline ModelSpec spec_from_json(const Json& j, const std::string& path = "") {
  JsonObject o(j, path);
  const auto fam = o.required<std::string>("family");
  ModelSpec out;
  if (fam == "transformer") {
    TransformerSpec s;
    detail::read_common_spec(o, s);
    o.optional("attn_heads", s.attn_heads);
    o.optional("layers", s.layers);
    o.optional("ffn_dim", s.ffn_dim);
    out = s;
  } else if (fam == "bilstm") {
    BiLstmSpec s;
    detail::read_common_spec(o, s);
    o.optional("hidden_dim", s.hidden_dim);
    o.optional("lstm_layers", s.lstm_layers);
    o.optional("attn_heads", s.attn_heads);
    out = s;
  } else if (fam == "cnn") {
    CnnSpec s;
    detail::read_common_spec(o, s);
    o.optional("n_blocks", s.n_blocks);
    o.optional("kernel_size", s.kernel_size);
    out = s;
  } else {
    throw ConfigError("'" + o.path_of("family") + "': unknown model family '" + fam + "'");
  }
  o.finish();
  return out;
}

// Fills the data-dependent fields of a spec.
inline void bind_spec_to_data(ModelSpec& spec, std::size_t vocab, std::size_t max_len, std::size_t classes,
                              Task task) {
  std::visit(
      [&](auto& s) {
        s.vocab_size = vocab;
        s.max_len = max_len;
        s.num_classes = classes;
        s.task = task;
      },
      spec);
}

}  // namespace kdb
