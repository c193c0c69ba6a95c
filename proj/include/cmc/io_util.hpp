#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmc::io {

/// Shortest round-trippable decimal rendering of a double; stable across runs.
std::string formatDouble(double v);

/// Write-temp-then-rename so readers never observe partial files.
void atomicWrite(const std::string& path, const std::string& content);

std::string readFile(const std::string& path);
bool fileExists(const std::string& path);

/// FNV-1a over bytes, rendered as 16 hex digits. Used for config/model hashes.
std::string fnv1aHex(const void* data, size_t len);
std::string fnv1aHex(const std::string& s);

}  // namespace cmc::io
