#pragma once

#include <array>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "kdbench/core/error.hpp"

namespace kdb {

inline std::string sha1_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha1(), nullptr) != 1) {
    throw Error("SHA-1 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Same id `git hash-object` prints for a file with these contents.
inline std::string git_blob_hash(std::string_view contents) {
  std::string obj = "blob " + std::to_string(contents.size());
  obj += '\0';
  obj.append(contents);
  return sha1_hex(obj);
}

}  // namespace kdb
