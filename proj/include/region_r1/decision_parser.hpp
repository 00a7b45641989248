#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "region_r1/crop_env.hpp"
#include "region_r1/errors.hpp"

namespace region_r1 {

// A policy output parsed from model text: the realized action plus the
// pre-validation tool-call payload.
struct ParsedDecision {
    Action action;
    std::optional<std::string> label;
    std::optional<std::array<double, 4>> raw_box;  // coordinates before rounding/clamping
};

namespace detail {

using json = nlohmann::json;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Contents of every <tool_call>...</tool_call> block, in order of appearance.
inline std::vector<std::string_view> tool_call_blocks(std::string_view text) {
    std::vector<std::string_view> blocks;
    constexpr std::string_view open = "<tool_call>";
    constexpr std::string_view close = "</tool_call>";
    std::size_t pos = 0;
    while (true) {
        const std::size_t start = text.find(open, pos);
        if (start == std::string_view::npos) break;
        const std::size_t body = start + open.size();
        const std::size_t end = text.find(close, body);
        if (end == std::string_view::npos) break;
        blocks.push_back(trim(text.substr(body, end - body)));
        pos = end + close.size();
    }
    return blocks;
}

// Extracts the raw value token following `"Decision":`. Returns the token and
// whether it was a JSON string.
inline std::pair<std::string, bool> decision_value_token(std::string_view text) {
    const std::size_t key = text.find("\"Decision\"");
    if (key == std::string_view::npos)
        throw NoDecisionFieldError("no \"Decision\" field in output");
    std::size_t i = key + std::string_view("\"Decision\"").size();
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size() || text[i] != ':')
        throw MalformedJsonError("\"Decision\" key without a value");
    ++i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) throw MalformedJsonError("\"Decision\" key without a value");

    if (text[i] == '"') {
        std::string value;
        for (std::size_t j = i + 1; j < text.size(); ++j) {
            if (text[j] == '\\') {
                if (j + 1 < text.size()) value.push_back(text[++j]);
                continue;
            }
            if (text[j] == '"') return {value, true};
            value.push_back(text[j]);
        }
        throw MalformedJsonError("unterminated \"Decision\" string");
    }
    // Non-string value: capture a primitive token for the error message.
    std::size_t j = i;
    while (j < text.size() && text[j] != ',' && text[j] != '}' && text[j] != ']' &&
           !std::isspace(static_cast<unsigned char>(text[j])))
        ++j;
    return {std::string(text.substr(i, j - i)), false};
}

enum class ToolCallFailure { None, BadJson, NotZoomTool, BadArity };

// Validates one candidate tool-call payload; fills box/label on success.
inline ToolCallFailure read_tool_call(const json& call, std::array<double, 4>& box,
                                      std::optional<std::string>& label) {
    if (!call.is_object()) return ToolCallFailure::NotZoomTool;
    const auto name = call.find("name");
    if (name == call.end() || !name->is_string() || *name != "image_zoom_in_tool")
        return ToolCallFailure::NotZoomTool;
    const auto args = call.find("arguments");
    if (args == call.end() || !args->is_object()) return ToolCallFailure::NotZoomTool;
    const auto bbox = args->find("bbox_2d");
    if (bbox == args->end()) return ToolCallFailure::NotZoomTool;
    if (!bbox->is_array() || bbox->size() != 4) return ToolCallFailure::BadArity;
    for (const auto& v : *bbox)
        if (!v.is_number()) return ToolCallFailure::BadArity;
    for (std::size_t k = 0; k < 4; ++k) box[k] = (*bbox)[k].get<double>();
    if (const auto lbl = args->find("label"); lbl != args->end() && lbl->is_string())
        label = lbl->get<std::string>();
    return ToolCallFailure::None;
}

}  // namespace detail

// Parses one raw model output. Coordinates are rounded half-up to cells and
// clamped to the image; a box that ends up inverted keeps decision REGION so
// the malformed-box penalty applies downstream.
inline ParsedDecision parse_decision(const std::string& text, int image_w, int image_h) {
    using detail::json;

    const auto [value, is_string] = detail::decision_value_token(text);
    if (!is_string || (value != "FULL" && value != "REGION"))
        throw UnknownDecisionValueError("Decision value must be \"FULL\" or \"REGION\", got: " +
                                        value);

    ParsedDecision out;
    if (value == "FULL") {
        out.action = Action::full();
        return out;
    }

    // Candidate payloads: every <tool_call> block, then a "Tool" object nested
    // in the outer JSON (both placements occur in the wild).
    std::vector<json> candidates;
    bool any_block = false;
    auto first_failure = detail::ToolCallFailure::None;
    auto note_failure = [&](detail::ToolCallFailure f) {
        if (first_failure == detail::ToolCallFailure::None) first_failure = f;
    };
    for (const auto block : detail::tool_call_blocks(text)) {
        any_block = true;
        json parsed = json::parse(block, nullptr, false);
        if (parsed.is_discarded()) {
            note_failure(detail::ToolCallFailure::BadJson);
            continue;
        }
        candidates.push_back(std::move(parsed));
    }
    if (json outer = json::parse(text, nullptr, false);
        outer.is_object() && outer.contains("Tool") && outer["Tool"].is_object()) {
        any_block = true;
        candidates.push_back(outer["Tool"]);
    }

    std::array<double, 4> raw{};
    bool found = false;
    for (const auto& call : candidates) {
        std::optional<std::string> label;
        const auto failure = detail::read_tool_call(call, raw, label);
        if (failure == detail::ToolCallFailure::None) {
            out.label = label;
            found = true;
            break;
        }
        note_failure(failure);
    }
    if (!found) {
        if (!any_block)
            throw MissingToolCallError("REGION decision without a <tool_call> block");
        switch (first_failure) {
            case detail::ToolCallFailure::BadJson:
                throw MalformedJsonError("tool_call block is not valid JSON");
            case detail::ToolCallFailure::BadArity:
                throw BadBBoxArityError("bbox_2d must hold exactly 4 numbers");
            default:
                throw MissingToolCallError("no parseable image_zoom_in_tool call");
        }
    }

    out.raw_box = raw;
    BBox box;
    box.x1 = static_cast<int>(std::clamp<long>(std::llround(raw[0]), 0, image_w));
    box.y1 = static_cast<int>(std::clamp<long>(std::llround(raw[1]), 0, image_h));
    box.x2 = static_cast<int>(std::clamp<long>(std::llround(raw[2]), 0, image_w));
    box.y2 = static_cast<int>(std::clamp<long>(std::llround(raw[3]), 0, image_h));
    out.action = Action::region(box);
    return out;
}

namespace detail {

inline std::string format_coord(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        return std::to_string(static_cast<long long>(v));
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

// Canonical single-line rendering; parse(serialize(d)) reproduces d for
// decisions whose action box matches the rounded, clamped raw box.
inline std::string serialize_decision(const ParsedDecision& d) {
    if (d.action.decision == Decision::Full) return "{\"Decision\": \"FULL\"}";
    std::string text = "{\"Decision\": \"REGION\", \"Tool\": \"image_zoom_in_tool\"} <tool_call>";
    text += "{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [";
    const auto& raw = *d.raw_box;
    for (std::size_t k = 0; k < 4; ++k) {
        if (k) text += ", ";
        text += detail::format_coord(raw[k]);
    }
    text += "]";
    if (d.label) {
        text += ", \"label\": ";
        text += nlohmann::json(*d.label).dump();
    }
    text += "}}</tool_call>";
    return text;
}

}  // namespace region_r1
