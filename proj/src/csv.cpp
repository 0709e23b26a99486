#include "grbsde/csv.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace grbsde {

std::string format_csv_number(double v) {
    if (v == 0.0) return "0";  // normalize "-0" for stable output
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace grbsde
