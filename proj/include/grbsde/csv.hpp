#ifndef GRBSDE_CSV_HPP
#define GRBSDE_CSV_HPP

#include <string>

namespace grbsde {

/**
 * Shortest-round-trip decimal rendering used for every CSV number:
 * '.' decimal separator, no locale dependence, byte-stable across runs.
 */
std::string format_csv_number(double v);

/** Writes a string to a file, creating parent directories; LF endings assumed. */
void write_text_file(const std::string& path, const std::string& content);

}  // namespace grbsde

#endif
