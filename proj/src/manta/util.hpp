#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manta {

// Text helpers. Case folding is ASCII-only.
std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(std::span<const std::string> parts, std::string_view sep);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

/// Compact decimal, at most 6 significant digits ("0.5", "1", "0.333333").
std::string format_number(double value);

// FNV-1a, used wherever a stable content hash is needed (mock providers, stub backend, run ids).
class Fnv1a {
public:
    Fnv1a& add(std::string_view bytes);
    Fnv1a& add(std::span<const std::uint8_t> bytes);
    Fnv1a& add(std::uint64_t value);
    Fnv1a& add(double value);
    std::uint64_t digest() const noexcept { return state_; }

private:
    Fnv1a& add_length_free(std::uint64_t value);

    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);

/// SplitMix64 stream. Platform-independent, unlike std distributions.
class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();
    double uniform();  // [0, 1)
    double normal();   // Box-Muller
    std::size_t below(std::size_t bound);

private:
    std::uint64_t state_;
};

/// MIME type from magic bytes; PNG, JPEG and binary PPM are recognized.
std::string sniff_mime(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace manta
