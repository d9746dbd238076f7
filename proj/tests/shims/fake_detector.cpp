// Stand-in for an external detector process. Reads request lines on stdin and
// answers with the bounding rectangle of all non-black pixels.
//   fake_detector [label] [--die-after N] [--garbage]
#include <cstdlib>
#include <iostream>
#include <string>

#include "rcv/io/png.hpp"
#include "rcv/protocol.hpp"

int main(int argc, char** argv) {
    std::string label = "thing";
    long die_after = -1;
    bool garbage = false;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--die-after" && i + 1 < argc) {
            die_after = std::atol(argv[++i]);
        } else if (arg == "--garbage") {
            garbage = true;
        } else {
            label = arg;
        }
    }
    std::string line;
    long served = 0;
    while (std::getline(std::cin, line)) {
        if (die_after >= 0 && served >= die_after) return 3;
        if (garbage) {
            std::cout << "{not json\n" << std::flush;
            continue;
        }
        const auto request = rcv::protocol::decode_request(line);
        const rcv::RgbImage image = rcv::io::read_png(request.image);
        int u0 = image.width, v0 = image.height, u1 = -1, v1 = -1;
        for (int v = 0; v < image.height; ++v) {
            for (int u = 0; u < image.width; ++u) {
                const rcv::Rgb c = image.at(u, v);
                if (c.r == 0 && c.g == 0 && c.b == 0) continue;
                u0 = std::min(u0, u);
                v0 = std::min(v0, v);
                u1 = std::max(u1, u + 1);
                v1 = std::max(v1, v + 1);
            }
        }
        rcv::protocol::Response response{request.id, {}};
        const bool wanted = !request.class_filter || *request.class_filter == label;
        if (u1 > 0 && wanted) response.boxes.push_back({label, 0.9, {double(u0), double(v0), double(u1), double(v1)}});
        std::cout << rcv::protocol::encode_response(response) << "\n" << std::flush;
        ++served;
    }
    return 0;
}
