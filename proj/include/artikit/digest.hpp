#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace artikit {

// Incremental SHA-256, hex-encoded. Thin wrapper over OpenSSL's EVP API so
// cache keys and determinism checks share one implementation.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update_doubles(const double* data, std::size_t count) {
    update(data, count * sizeof(double));
  }

  // Finalizes; the object must not be updated afterwards.
  std::string hex();

 private:
  void* ctx_;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

}  // namespace artikit
