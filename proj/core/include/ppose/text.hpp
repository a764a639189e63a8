#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ppose/error.hpp"

namespace ppose {

// Lowercases and splits on whitespace runs.
std::vector<std::string> tokenize(const std::string& text);

// Prompt template. The filled slot is one tier of the object/part/keypoint
// hierarchy; a keypoint string appends its hierarchy:
//   ("oil painting", "person")              -> "An oil painting photo of a person"
//   ("natural", "cat", "", "left eye")      -> "An natural photo of a left eye of the cat"
//   ("", "dog")                             -> "A photo of a dog"
std::string render_template(const std::string& style, const std::string& object_name,
                            const std::string& part = "", const std::string& keypoint = "");

// Keypoint-level string without the object tier. Categories that share a
// keypoint name share this string, so their embeddings coincide before any
// cross-modality interaction.
std::string render_keypoint_string(const std::string& style, const std::string& keypoint,
                                   const std::string& part = "");

// Token table with two reserved slots. Unknown tokens map to <unk>, never
// an error; every encoded sequence ends with <eos>.
class Vocabulary {
  public:
    static constexpr int kUnk = 0;
    static constexpr int kEos = 1;

    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& words);

    int id(const std::string& token) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // ids of `text` (tokenized), truncated to max_len - 1, with <eos> last.
    std::vector<int> encode(const std::string& text, int max_len) const;

    // Newline-delimited token file; reserved tokens are implicit.
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

  private:
    void add(const std::string& token);
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Collects every token appearing in the given strings (sorted, deduped).
Vocabulary build_vocabulary(const std::vector<std::string>& strings);

struct TextPromptClass {
    std::string object_name;
    std::vector<std::string> keypoint_names;
    std::vector<std::string> keypoint_parts;  // optional, aligned or empty
};

struct TextPrompt {
    std::string style;
    std::vector<TextPromptClass> classes;

    // Throws ValidationError on duplicate class names, duplicate keypoint
    // names within a class, or an empty prompt.
    void validate() const;
};

}  // namespace ppose
