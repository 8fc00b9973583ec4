#include "ccnn/json_io.hpp"

#include <fstream>
#include <sstream>

#include "ccnn/error.hpp"

namespace ccnn {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse_error, path + ": " + e.what());
    }
}

void write_json_file(const nlohmann::json& j, const std::string& path) { write_text_file(j.dump(2) + "\n", path); }

void write_text_file(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path);
}

}  // namespace ccnn
