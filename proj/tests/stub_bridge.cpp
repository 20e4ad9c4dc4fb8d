// Deterministic stand-in for a model bridge, for protocol tests.
//
//   swd_stub_bridge [--vocab K] [--mode position|uniform|wrong-length|nan|error|silent]
//                   [--hello-vocab K] [--die-after N]
//
// position mode puts a logit of 4 on token (pos % K), so replies can be
// checked for alignment with mask_positions.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include "json.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
    std::size_t vocab = 4;
    std::size_t hello_vocab = 0;
    std::string mode = "position";
    long die_after = -1;
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--vocab") vocab = std::stoul(argv[i + 1]);
        else if (flag == "--mode") mode = argv[i + 1];
        else if (flag == "--hello-vocab") hello_vocab = std::stoul(argv[i + 1]);
        else if (flag == "--die-after") die_after = std::stol(argv[i + 1]);
    }
    if (hello_vocab == 0) hello_vocab = vocab;

    std::string line;
    long served = 0;
    while (std::getline(std::cin, line)) {
        json req;
        try {
            req = json::parse(line);
        } catch (const json::exception&) {
            std::cout << json{{"type", "error"}, {"message", "malformed request"}}.dump() << std::endl;
            continue;
        }
        const std::string type = req.value("type", "");
        if (type == "hello") {
            std::cout << json{{"type", "hello"}, {"protocol", 1}, {"vocab_size", hello_vocab}}.dump() << std::endl;
            continue;
        }
        if (type != "denoise") {
            std::cout << json{{"type", "error"}, {"message", "unknown request type '" + type + "'"}}.dump() << std::endl;
            continue;
        }
        if (die_after >= 0 && served >= die_after) return 0;
        ++served;
        if (mode == "silent") continue;
        if (mode == "error") {
            std::cout << json{{"type", "error"}, {"message", "model failure"}}.dump() << std::endl;
            continue;
        }
        json rows = json::array();
        for (const auto& p : req["mask_positions"]) {
            const auto pos = p.get<std::size_t>();
            const std::size_t width = mode == "wrong-length" ? vocab - 1 : vocab;
            json row = json::array();
            for (std::size_t v = 0; v < width; ++v) {
                if (mode == "nan" && v == 0) {
                    row.push_back(nullptr);
                } else if (mode == "uniform") {
                    row.push_back(1.5);
                } else {
                    row.push_back(v == pos % vocab ? 4.0 : 0.0);
                }
            }
            rows.push_back(row);
        }
        std::cout << json{{"type", "logits"}, {"rows", rows}}.dump() << std::endl;
    }
    return 0;
}
