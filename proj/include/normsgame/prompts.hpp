#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

// Versioned prompt templates from prompts/*.txt, embedded at build time.
// A template named "rephrase.v1" comes from prompts/rephrase.v1.txt.
namespace normsgame::prompts {

// Template text with trailing line breaks removed; throws std::out_of_range
// for an unknown name.
std::string_view get(std::string_view name);

std::vector<std::string> names();

// Substitutes every {{key}}. A placeholder without a value throws
// std::invalid_argument naming the key.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace normsgame::prompts
