// SPDX-License-Identifier: Apache-2.0
#include "meg/io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace meg::io {

std::string sha256_raw(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 computation failed");
  }
  return std::string(reinterpret_cast<const char*>(digest), len);
}

std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : sha256_raw(bytes)) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string seal(std::string_view magic, std::uint32_t version, std::string_view payload) {
  ByteWriter w;
  w.put_raw(magic.data(), magic.size());
  w.put_u32(version);
  w.put_u64(payload.size());
  w.put_raw(payload.data(), payload.size());
  const std::string digest = sha256_raw(payload);
  w.put_raw(digest.data(), digest.size());
  return w.take();
}

std::string unseal(std::string_view magic, std::uint32_t version, std::string_view bytes, const std::string& what) {
  if (bytes.size() < magic.size() + 12 || bytes.substr(0, magic.size()) != magic) {
    throw IntegrityError(what + ": not a recognised container (bad magic or truncated header)");
  }
  ByteReader r(bytes.substr(magic.size()));
  const std::uint32_t found = r.get_u32();
  if (found != version) {
    throw UnsupportedVersionError(what + ": unsupported format version " + std::to_string(found) + " (expected " +
                                  std::to_string(version) + ")");
  }
  const std::uint64_t size = r.get_u64();
  if (r.remaining() != size + 32) throw IntegrityError(what + ": size mismatch (truncated or padded file)");
  std::string payload(size, '\0');
  r.get_raw(payload.data(), size);
  std::string digest(32, '\0');
  r.get_raw(digest.data(), 32);
  if (digest != sha256_raw(payload)) throw IntegrityError(what + ": content checksum mismatch");
  return payload;
}

void write_array(const std::filesystem::path& path, const Mat<float>& values) {
  ByteWriter w;
  w.put_matrix(values);
  write_file_atomic(path, seal(kArrayMagic, kArrayVersion, w.bytes()));
}

Mat<float> read_array(const std::filesystem::path& path) {
  const std::string payload = unseal(kArrayMagic, kArrayVersion, read_file(path), path.string());
  ByteReader r(payload);
  return r.get_matrix<float>();
}

}  // namespace meg::io
