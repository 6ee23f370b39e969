#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace temprank {

// 64-bit FNV-1a. Used for config fingerprints and seed mixing.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// splitmix64 finalizer; good enough for deriving independent RNG streams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

std::string fingerprint_hex(uint64_t h);

// Whole-file IO. write_file_atomic writes to <path>.tmp then renames, so a
// crash never leaves a partial artifact behind.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string lowercase(const std::string& s);
std::string utc_timestamp();

// Worker cap from TEMPRANK_THREADS; returns 0 when unset/invalid.
int env_thread_cap();
void apply_thread_cap();

}  // namespace temprank
