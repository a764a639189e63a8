#include "ppose/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace ppose {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string render_template(const std::string& style, const std::string& object_name,
                            const std::string& part, const std::string& keypoint) {
    if (object_name.empty()) throw ValidationError("render_template: empty object name");
    std::string head = style.empty() ? "A photo of a " : "An " + style + " photo of a ";
    if (keypoint.empty()) {
        if (part.empty()) return head + object_name;
        return head + part + " of the " + object_name;
    }
    if (part.empty()) return head + keypoint + " of the " + object_name;
    return head + keypoint + " of the " + part + " " + object_name;
}

std::string render_keypoint_string(const std::string& style, const std::string& keypoint,
                                   const std::string& part) {
    if (keypoint.empty()) throw ValidationError("render_keypoint_string: empty keypoint name");
    std::string head = style.empty() ? "A photo of a " : "An " + style + " photo of a ";
    if (part.empty()) return head + keypoint;
    return head + keypoint + " of the " + part;
}

Vocabulary::Vocabulary() {
    add("<unk>");
    add("<eos>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words)
        if (!index_.count(w)) add(w);
}

void Vocabulary::add(const std::string& token) {
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text, int max_len) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) {
        if (static_cast<int>(ids.size()) >= max_len - 1) break;
        ids.push_back(id(tok));
    }
    ids.push_back(kEos);
    return ids;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("vocabulary: cannot open " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty() && line != "<unk>" && line != "<eos>") words.push_back(line);
    }
    return Vocabulary(words);
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("vocabulary: cannot write " + path);
    for (int i = 2; i < size(); ++i) f << tokens_[static_cast<std::size_t>(i)] << "\n";
}

Vocabulary build_vocabulary(const std::vector<std::string>& strings) {
    std::set<std::string> words;
    for (const auto& s : strings)
        for (const auto& tok : tokenize(s)) words.insert(tok);
    return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

void TextPrompt::validate() const {
    if (classes.empty()) throw ValidationError("text prompt: at least one class required");
    std::set<std::string> names;
    for (const auto& c : classes) {
        if (c.object_name.empty()) throw ValidationError("text prompt: empty class name");
        if (!names.insert(c.object_name).second)
            throw ValidationError("text prompt: duplicate class name '" + c.object_name + "'");
        if (!c.keypoint_parts.empty() && c.keypoint_parts.size() != c.keypoint_names.size())
            throw ValidationError("text prompt: keypoint_parts length mismatch for '" +
                                  c.object_name + "'");
        std::set<std::string> kp(c.keypoint_names.begin(), c.keypoint_names.end());
        if (kp.size() != c.keypoint_names.size())
            throw ValidationError("text prompt: duplicate keypoint name in '" + c.object_name +
                                  "'");
    }
}

}  // namespace ppose
