#include "detune/fsio.hpp"

#include "detune/errors.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <system_error>

namespace detune::fsio {

void write_file_atomic(const std::string& path,
                       const std::function<void(std::ostream&)>& fill) {
    const std::string tmp = path + ".tmp";
    try {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        fill(out);
        out.flush();
        if (!out) throw IoError("write failed: " + tmp);
    } catch (...) {
        std::error_code ignored;
        std::filesystem::remove(tmp, ignored);
        throw;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename " + tmp + " -> " + path + ": " +
                      ec.message());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return text;
}

} // namespace detune::fsio
