#pragma once

#include <string>
#include <vector>

namespace fedgp {

// Shortest decimal representation that round-trips through strtod.
std::string fmt_double(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace fedgp
