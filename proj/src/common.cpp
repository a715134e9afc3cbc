#include "vdi/common.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>

namespace vdi {

Digest sha256(std::span<const Byte> data) {
  Hasher h;
  h.update(data);
  return h.finish();
}

Hasher::Hasher() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 init failed");
  }
}

Hasher::~Hasher() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Hasher& Hasher::update(std::span<const Byte> data) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(), data.size()) != 1) {
    throw Error("sha256 update failed");
  }
  return *this;
}

Hasher& Hasher::update(std::string_view text) {
  return update(std::span<const Byte>(reinterpret_cast<const Byte*>(text.data()), text.size()));
}

Hasher& Hasher::update(const Digest& d) { return update(std::span<const Byte>(d.data(), d.size())); }

Hasher& Hasher::update_u32(std::uint32_t v) {
  Byte buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<Byte>(v >> (8 * i));
  return update(std::span<const Byte>(buf, 4));
}

Hasher& Hasher::update_u64(std::uint64_t v) {
  Byte buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<Byte>(v >> (8 * i));
  return update(std::span<const Byte>(buf, 8));
}

Digest Hasher::finish() {
  Digest out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 || len != out.size()) {
    throw Error("sha256 final failed");
  }
  return out;
}

Bytes to_bytes(std::string_view text) {
  return Bytes(text.begin(), text.end());
}

std::string hex_encode(std::span<const Byte> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (Byte b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

namespace {
int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace

Bytes hex_decode(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error("hex string has odd length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_digit(hex[i]);
    int lo = hex_digit(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error("hex string has invalid digit");
    out.push_back(static_cast<Byte>(hi << 4 | lo));
  }
  return out;
}

Digest digest_from_hex(std::string_view hex) {
  Bytes raw = hex_decode(hex);
  if (raw.size() != 32) throw Error("digest must be 32 bytes");
  Digest d{};
  std::memcpy(d.data(), raw.data(), 32);
  return d;
}

void append_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<Byte>(v >> (8 * i)));
}

void append_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<Byte>(v >> (8 * i)));
}

void append_f32(Bytes& out, float v) {
  append_u32(out, float_bits(v));
}

std::uint32_t read_u32(std::span<const Byte> in, std::size_t offset) {
  if (offset + 4 > in.size()) throw Error("read_u32 past end of buffer");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::span<const Byte> in, std::size_t offset) {
  if (offset + 8 > in.size()) throw Error("read_u64 past end of buffer");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}

float read_f32(std::span<const Byte> in, std::size_t offset) {
  return bits_to_float(read_u32(in, offset));
}

std::uint32_t float_bits(float x) { return std::bit_cast<std::uint32_t>(x); }

float bits_to_float(std::uint32_t bits) { return std::bit_cast<float>(bits); }

}  // namespace vdi
