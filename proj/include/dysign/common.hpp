// Shared plumbing: error types, hashing, logging, small file and string helpers.
#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dysign {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors. One base class so callers can catch everything from this library,
// plus a few categories the tests and the CLI need to tell apart.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problems: unreadable report, missing manifest, failed write.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible serialized data (bad manifest line, corrupt
// store/index file, format-version or parameter mismatch).
class FormatError : public Error {
public:
    using Error::Error;
};

// Duplicate-id style conflicts.
class ConflictError : public Error {
public:
    using Error::Error;
};

// API called in a state it does not support (e.g. stale corpus statistics).
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Bad arguments or configuration values.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing. FNV-1a for byte strings, the splitmix64 finalizer as a cheap
// integer mixer. Both are fixed for the life of the on-disk formats: report
// ids and minhash signatures must not change between releases.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

inline std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logging: line-oriented, stderr only, filtered by a process-wide level.
// ---------------------------------------------------------------------------

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline LogLevel& log_level() {
    static LogLevel level = LogLevel::Info;
    return level;
}

inline void log_line(LogLevel lvl, const std::string& msg) {
    if (lvl < log_level()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

inline void log_debug(const std::string& msg) { log_line(LogLevel::Debug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::Warn, msg); }
inline void log_error(const std::string& msg) { log_line(LogLevel::Error, msg); }

// ---------------------------------------------------------------------------
// Files and strings.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return std::move(buf).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

// Replaces ill-formed UTF-8 sequences with U+FFFD in place and returns how
// many substitutions were made. One replacement per rejected byte keeps the
// scan simple; report text is overwhelmingly ASCII so this path is cold.
inline std::size_t utf8_sanitize(std::string& text) {
    std::string out;
    out.reserve(text.size());
    std::size_t replaced = 0;
    const auto* p = reinterpret_cast<const unsigned char*>(text.data());
    std::size_t n = text.size();
    std::size_t i = 0;
    auto reject = [&](std::size_t count) {
        for (std::size_t k = 0; k < count; ++k) out.append("\xEF\xBF\xBD");
        replaced += count;
    };
    while (i < n) {
        unsigned char c = p[i];
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            ++i;
            continue;
        }
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) { len = 2; cp = c & 0x1Fu; }
        else if ((c & 0xF0) == 0xE0) { len = 3; cp = c & 0x0Fu; }
        else if ((c & 0xF8) == 0xF0) { len = 4; cp = c & 0x07u; }
        else { reject(1); ++i; continue; }
        if (i + len > n) { reject(1); ++i; continue; }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            if ((p[i + k] & 0xC0) != 0x80) { ok = false; break; }
            cp = (cp << 6) | (p[i + k] & 0x3Fu);
        }
        if (ok) {
            // Overlongs, surrogates and values past U+10FFFF are invalid.
            if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                (len == 4 && cp < 0x10000) || (cp >= 0xD800 && cp <= 0xDFFF) ||
                cp > 0x10FFFF) {
                ok = false;
            }
        }
        if (!ok) { reject(1); ++i; continue; }
        out.append(reinterpret_cast<const char*>(p + i), len);
        i += len;
    }
    if (replaced != 0) text = std::move(out);
    return replaced;
}

inline const char* getenv_or_null(const char* name) { return std::getenv(name); }

// ---------------------------------------------------------------------------
// parallel_map: apply fn(i) for i in [0, n) across `threads` workers and
// collect results in input order. Results depend only on the index, so the
// output is identical for every thread count.
// ---------------------------------------------------------------------------

template <typename Fn>
auto parallel_map(std::size_t n, unsigned threads, Fn&& fn)
    -> std::vector<decltype(fn(std::size_t{0}))> {
    using R = decltype(fn(std::size_t{0}));
    std::vector<R> results(n);
    if (n == 0) return results;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
        return results;
    }
    unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(n));
    std::vector<std::future<void>> futures;
    futures.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&, w]() {
            for (std::size_t i = w; i < n; i += workers) results[i] = fn(i);
        }));
    }
    for (auto& f : futures) f.get();
    return results;
}

}  // namespace dysign
