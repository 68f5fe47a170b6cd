// Small serialization helpers shared by the on-disk formats.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace vedit::io {

std::string format_double(double v);
double parse_double(const std::string& s);

void write_u32_le(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& in);
void write_f64_le(std::ostream& out, double v);
double read_f64_le(std::istream& in);
void append_f32_le(std::string& buf, float v);
float read_f32_le(std::istream& in);

/// "key=value" lines; blank lines ignored.
std::map<std::string, std::string> parse_header(const std::string& text);

/// Writes through a temporary sibling file and renames it into place.
void write_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);

std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace vedit::io
