#pragma once

#include <functional>
#include <string>

namespace detune::fsio {

// All artifact writes go through here: fill a temporary file in the target
// directory, then rename it onto the destination. Readers therefore never see
// a half-written dataset, model or CSV. Raises IoError on any failure.
void write_file_atomic(const std::string& path,
                       const std::function<void(std::ostream&)>& fill);

std::string read_file(const std::string& path);

} // namespace detune::fsio
