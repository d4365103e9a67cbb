#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kdbench/data/io.hpp"
#include "kdbench/data/text.hpp"
#include "kdbench/models/spec.hpp"

namespace kdb {

// One labeled sequence. Classification uses `text`/`tokens` and `label`;
// sequence labeling uses `tokens` and the aligned `tags`.
struct Example {
  std::string text;
  std::vector<std::string> tokens;
  std::size_t label = 0;
  std::vector<std::size_t> tags;

  bool operator==(const Example&) const = default;
};

using Split = std::vector<Example>;

struct LabeledSplit {
  std::vector<std::string> labels;
  Split examples;
};

struct Dataset {
  std::string name;
  Task task = Task::classification;
  std::vector<std::string> labels;
  Split train;
  Split dev;
  Split test;

  std::size_t num_labels() const noexcept { return labels.size(); }
};

inline Example make_text_example(std::string text, std::size_t label) {
  Example e;
  e.tokens = tokenize(text);
  e.text = std::move(text);
  e.label = label;
  return e;
}

inline Example make_tagged_example(std::vector<std::string> tokens, std::vector<std::size_t> tags) {
  if (tokens.size() != tags.size()) throw ContractError("tag count differs from token count");
  Example e;
  e.text = join(tokens);
  e.tokens = std::move(tokens);
  e.tags = std::move(tags);
  return e;
}

// ---- CSV (RFC 4180) --------------------------------------------------------

namespace detail {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

inline std::vector<CsvRecord> parse_csv(std::string_view s) {
  if (s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
  std::vector<CsvRecord> records;
  std::size_t i = 0, line = 1;
  while (i < s.size()) {
    CsvRecord rec;
    rec.line = line;
    std::string field;
    bool done = false;
    while (!done) {
      field.clear();
      if (i < s.size() && s[i] == '"') {
        ++i;
        while (true) {
          if (i >= s.size()) throw FormatError("unterminated quoted field", rec.line);
          if (s[i] == '"') {
            if (i + 1 < s.size() && s[i + 1] == '"') {
              field += '"';
              i += 2;
              continue;
            }
            ++i;
            break;
          }
          if (s[i] == '\n') ++line;
          field += s[i++];
        }
        if (i < s.size() && s[i] != ',' && s[i] != '\n' && s[i] != '\r') {
          throw FormatError("unexpected character after closing quote", line);
        }
      } else {
        while (i < s.size() && s[i] != ',' && s[i] != '\n' && s[i] != '\r') {
          if (s[i] == '"') throw FormatError("quote inside unquoted field", line);
          field += s[i++];
        }
      }
      rec.fields.push_back(field);
      if (i < s.size() && s[i] == ',') {
        ++i;
        continue;
      }
      if (i < s.size() && s[i] == '\r') ++i;
      if (i < s.size() && s[i] == '\n') {
        ++i;
        ++line;
      }
      done = true;
    }
    if (rec.fields.size() == 1 && rec.fields[0].empty()) continue;  // blank line
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string csv_quote(std::string_view field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos || field.empty() ||
                     std::isspace(static_cast<unsigned char>(field.front())) ||
                     std::isspace(static_cast<unsigned char>(field.back()));
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::string> sorted_unique(const std::vector<std::string>& xs) {
  std::set<std::string> s(xs.begin(), xs.end());
  return {s.begin(), s.end()};
}

}  // namespace detail

inline std::string csv_row(std::initializer_list<std::string_view> fields) {
  std::string out;
  bool first = true;
  for (auto f : fields) {
    if (!first) out += ',';
    first = false;
    out += detail::csv_quote(f);
  }
  return out + '\n';
}

// Header `text,label`; label ids follow the sorted label names.
inline LabeledSplit parse_classification_csv(std::string_view contents) {
  auto records = detail::parse_csv(contents);
  if (records.empty()) throw FormatError("missing header 'text,label'", 1);
  const auto& header = records.front();
  if (header.fields.size() != 2 || header.fields[0] != "text" || header.fields[1] != "label") {
    throw FormatError("header must be 'text,label'", header.line);
  }
  std::vector<std::string> names;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != 2) {
      throw FormatError("expected 2 fields, found " + std::to_string(rec.fields.size()), rec.line);
    }
    if (rec.fields[1].empty()) throw FormatError("empty label", rec.line);
    names.push_back(rec.fields[1]);
  }
  LabeledSplit out;
  out.labels = detail::sorted_unique(names);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    const auto it = std::lower_bound(out.labels.begin(), out.labels.end(), f[1]);
    out.examples.push_back(make_text_example(f[0], static_cast<std::size_t>(it - out.labels.begin())));
  }
  return out;
}

inline LabeledSplit load_classification_csv(const std::filesystem::path& path) {
  try {
    return parse_classification_csv(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string format_classification_csv(const Split& examples, const std::vector<std::string>& labels) {
  std::string out = "text,label\n";
  for (const auto& e : examples) out += csv_row({e.text, labels.at(e.label)});
  return out;
}

inline void write_classification_csv(const std::filesystem::path& path, const Split& examples,
                                     const std::vector<std::string>& labels) {
  write_file(path, format_classification_csv(examples, labels));
}

// ---- CoNLL -----------------------------------------------------------------

inline bool valid_bio_tag(std::string_view tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

// Lines `token<TAB>tag`; blank lines separate sentences. I- after O is
// accepted here and repaired by the span metric.
inline LabeledSplit parse_conll(std::string_view contents) {
  struct Raw {
    std::vector<std::string> tokens, tags;
  };
  std::vector<Raw> sentences;
  std::vector<std::string> names;
  Raw current;
  const auto lines = split_lines(contents);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string& line = lines[n];
    if (normalize_whitespace(line).empty()) {
      if (!current.tokens.empty()) sentences.push_back(std::move(current));
      current = {};
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError("expected 'token<TAB>tag'", n + 1);
    }
    std::string token = line.substr(0, tab), tag = line.substr(tab + 1);
    if (token.empty()) throw FormatError("empty token", n + 1);
    if (!valid_bio_tag(tag)) throw FormatError("tag '" + tag + "' is not O, B-X or I-X", n + 1);
    names.push_back(tag);
    current.tokens.push_back(std::move(token));
    current.tags.push_back(std::move(tag));
  }
  if (!current.tokens.empty()) sentences.push_back(std::move(current));

  LabeledSplit out;
  names.push_back("O");
  out.labels = detail::sorted_unique(names);
  for (auto& s : sentences) {
    std::vector<std::size_t> ids;
    for (const auto& t : s.tags) {
      ids.push_back(static_cast<std::size_t>(std::lower_bound(out.labels.begin(), out.labels.end(), t) -
                                             out.labels.begin()));
    }
    out.examples.push_back(make_tagged_example(std::move(s.tokens), std::move(ids)));
  }
  return out;
}

inline LabeledSplit load_conll(const std::filesystem::path& path) {
  try {
    return parse_conll(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string format_conll(const Split& examples, const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t s = 0; s < examples.size(); ++s) {
    if (s) out += '\n';
    const auto& e = examples[s];
    for (std::size_t t = 0; t < e.tokens.size(); ++t) out += e.tokens[t] + '\t' + labels.at(e.tags[t]) + '\n';
  }
  return out;
}

inline void write_conll(const std::filesystem::path& path, const Split& examples,
                        const std::vector<std::string>& labels) {
  write_file(path, format_conll(examples, labels));
}

// ---- Dataset assembly ------------------------------------------------------

// Re-indexes every split onto the sorted union of their label names.
inline Dataset assemble_dataset(std::string name, Task task, LabeledSplit train, LabeledSplit dev,
                                LabeledSplit test) {
  std::vector<std::string> all = train.labels;
  all.insert(all.end(), dev.labels.begin(), dev.labels.end());
  all.insert(all.end(), test.labels.begin(), test.labels.end());
  if (task == Task::sequence_labeling) all.push_back("O");
  Dataset d;
  d.name = std::move(name);
  d.task = task;
  d.labels = detail::sorted_unique(all);
  auto remap = [&](LabeledSplit& s) {
    std::vector<std::size_t> to(s.labels.size());
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      to[i] = static_cast<std::size_t>(std::lower_bound(d.labels.begin(), d.labels.end(), s.labels[i]) -
                                       d.labels.begin());
    }
    for (auto& e : s.examples) {
      e.label = task == Task::classification ? to[e.label] : 0;
      for (auto& t : e.tags) t = to[t];
    }
    return std::move(s.examples);
  };
  d.train = remap(train);
  d.dev = remap(dev);
  d.test = remap(test);
  return d;
}

// Reads train/dev/test files (`.csv` for classification, `.conll` for
// sequence labeling) from a directory.
inline Dataset load_dataset(const std::filesystem::path& dir, Task task) {
  const bool cls = task == Task::classification;
  auto load = [&](const char* split) {
    const auto path = dir / (std::string(split) + (cls ? ".csv" : ".conll"));
    return cls ? load_classification_csv(path) : load_conll(path);
  };
  return assemble_dataset(dir.filename().string(), task, load("train"), load("dev"), load("test"));
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  const bool cls = d.task == Task::classification;
  for (const auto& [split, examples] : {std::pair{"train", &d.train}, {"dev", &d.dev}, {"test", &d.test}}) {
    const auto path = dir / (std::string(split) + (cls ? ".csv" : ".conll"));
    if (cls) write_classification_csv(path, *examples, d.labels);
    else write_conll(path, *examples, d.labels);
  }
}

}  // namespace kdb
