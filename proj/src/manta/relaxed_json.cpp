#include "manta/relaxed_json.hpp"

#include "manta/error.hpp"

#include <cctype>
#include <cstdlib>
#include <string>

namespace manta {

namespace {

class RelaxedParser {
public:
    explicit RelaxedParser(std::string_view text) : text_(text) {}

    nlohmann::json parse_root() {
        auto start = text_.find_first_of("{[");
        if (start == std::string_view::npos) fail("no object or array found");
        pos_ = start;
        return parse_value();
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorCode::SchemaError, "relaxed json: " + what + " at offset " + std::to_string(pos_));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    char peek() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        return text_[pos_];
    }

    nlohmann::json parse_value() {
        char c = peek();
        if (c == '{') return parse_object();
        if (c == '[') return parse_array();
        if (c == '"' || c == '\'') return parse_string();
        if (c == '-' || c == '+' || std::isdigit(static_cast<unsigned char>(c))) return parse_number();
        return parse_word();
    }

    nlohmann::json parse_object() {
        ++pos_;
        auto obj = nlohmann::json::object();
        while (true) {
            char c = peek();
            if (c == '}') {
                ++pos_;
                return obj;
            }
            if (c != '"' && c != '\'') fail("expected key");
            std::string key = parse_string();
            if (peek() != ':') fail("expected ':'");
            ++pos_;
            obj[key] = parse_value();
            c = peek();
            if (c == ',') {
                ++pos_;
            } else if (c != '}') {
                fail("expected ',' or '}'");
            }
        }
    }

    nlohmann::json parse_array() {
        ++pos_;
        auto arr = nlohmann::json::array();
        while (true) {
            char c = peek();
            if (c == ']') {
                ++pos_;
                return arr;
            }
            if (c == '.' && text_.substr(pos_).starts_with("...")) {
                // Models sometimes elide list tails with "...".
                pos_ += 3;
            } else {
                arr.push_back(parse_value());
            }
            c = peek();
            if (c == ',') {
                ++pos_;
            } else if (c != ']') {
                fail("expected ',' or ']'");
            }
        }
    }

    std::string parse_string() {
        char quote = text_[pos_++];
        std::string out;
        while (pos_ < text_.size()) {
            char c = text_[pos_++];
            if (c == quote) return out;
            if (c != '\\') {
                out.push_back(c);
                continue;
            }
            if (pos_ >= text_.size()) break;
            char e = text_[pos_++];
            switch (e) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            case 'b': out.push_back('\b'); break;
            case 'f': out.push_back('\f'); break;
            case 'u': {
                if (pos_ + 4 > text_.size()) fail("truncated \\u escape");
                auto code = std::strtoul(std::string(text_.substr(pos_, 4)).c_str(), nullptr, 16);
                pos_ += 4;
                append_utf8(out, static_cast<std::uint32_t>(code));
                break;
            }
            default: out.push_back(e); break;
            }
        }
        fail("unterminated string");
    }

    static void append_utf8(std::string& out, std::uint32_t cp) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }

    nlohmann::json parse_number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                                       text_[pos_] == '.' || text_[pos_] == '-' || text_[pos_] == '+')) {
            ++pos_;
        }
        std::string token(text_.substr(start, pos_ - start));
        char* end = nullptr;
        if (token.find_first_of(".eE") == std::string::npos) {
            long long v = std::strtoll(token.c_str(), &end, 10);
            if (end && *end == '\0') return v;
        }
        double d = std::strtod(token.c_str(), &end);
        if (!end || *end != '\0') fail("bad number '" + token + "'");
        return d;
    }

    nlohmann::json parse_word() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        std::string_view word = text_.substr(start, pos_ - start);
        if (word == "true" || word == "True") return true;
        if (word == "false" || word == "False") return false;
        if (word == "null" || word == "None") return nullptr;
        pos_ = start;
        fail("unexpected token");
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

} // namespace

nlohmann::json parse_relaxed_json(std::string_view text) {
    return RelaxedParser(text).parse_root();
}

} // namespace manta
