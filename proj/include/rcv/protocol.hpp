#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/image.hpp"
#include "rcv/io/json.hpp"

// Newline-delimited JSON spoken with external detector processes:
//   request:  {"id": int, "image": "/abs/path.png", "class_filter": "sofa"|null}
//   response: {"id": int, "boxes": [{"class": str, "score": float, "rect": [u0,v0,u1,v1]}]}
namespace rcv::protocol {

using nlohmann::json;

struct Request {
    std::int64_t id = 0;
    std::string image;
    std::optional<std::string> class_filter;

    friend bool operator==(const Request&, const Request&) = default;
};

struct Response {
    std::int64_t id = 0;
    std::vector<Detection2D> boxes;

    friend bool operator==(const Response&, const Response&) = default;
};

inline std::string encode_request(const Request& r) {
    json j = {{"id", r.id}, {"image", r.image}, {"class_filter", nullptr}};
    if (r.class_filter) j["class_filter"] = *r.class_filter;
    return j.dump();
}

inline std::string encode_response(const Response& r) {
    json boxes = json::array();
    for (const auto& d : r.boxes) boxes.push_back(io::detection_to_json(d));
    return json{{"id", r.id}, {"boxes", boxes}}.dump();
}

namespace detail {

inline json parse_line(const std::string& line) {
    if (line.find('\n') != std::string::npos) fail(ErrorKind::ProtocolError, "message spans several lines");
    try {
        json j = json::parse(line);
        if (!j.is_object()) fail(ErrorKind::ProtocolError, "message is not a json object");
        return j;
    } catch (const json::exception& e) {
        fail(ErrorKind::ProtocolError, std::string("malformed json: ") + e.what());
    }
}

inline std::int64_t parse_id(const json& j) {
    if (!j.contains("id") || !j["id"].is_number_integer()) fail(ErrorKind::ProtocolError, "missing integer id");
    return j["id"].get<std::int64_t>();
}

}  // namespace detail

inline Request decode_request(const std::string& line) {
    const json j = detail::parse_line(line);
    Request r;
    r.id = detail::parse_id(j);
    if (!j.contains("image") || !j["image"].is_string()) fail(ErrorKind::ProtocolError, "missing image path");
    r.image = j["image"].get<std::string>();
    if (j.contains("class_filter") && !j["class_filter"].is_null()) {
        if (!j["class_filter"].is_string()) fail(ErrorKind::ProtocolError, "class_filter must be a string or null");
        r.class_filter = j["class_filter"].get<std::string>();
    }
    return r;
}

inline Response decode_response(const std::string& line) {
    const json j = detail::parse_line(line);
    Response r;
    r.id = detail::parse_id(j);
    if (!j.contains("boxes") || !j["boxes"].is_array()) fail(ErrorKind::ProtocolError, "missing boxes array");
    for (const auto& b : j["boxes"]) {
        try {
            Detection2D d = io::detection_from_json(b);
            if (!(d.score >= 0.0 && d.score <= 1.0)) fail(ErrorKind::ProtocolError, "score outside [0,1]");
            r.boxes.push_back(std::move(d));
        } catch (const json::exception& e) {
            fail(ErrorKind::ProtocolError, std::string("malformed box: ") + e.what());
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::ProtocolError) throw;
            fail(ErrorKind::ProtocolError, e.message());
        }
    }
    return r;
}

}  // namespace rcv::protocol
