#include "normsgame/prompts.hpp"

#include <stdexcept>
#include <utility>

namespace normsgame::prompts {
namespace detail {
extern const std::pair<std::string_view, std::string_view> kTemplates[];
extern const unsigned kTemplateCount;
}  // namespace detail

std::string_view get(std::string_view name) {
  for (unsigned i = 0; i < detail::kTemplateCount; ++i) {
    if (detail::kTemplates[i].first == name) {
      auto text = detail::kTemplates[i].second;
      while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
      return text;
    }
  }
  throw std::out_of_range("unknown prompt template '" + std::string(name) + "'");
}

std::vector<std::string> names() {
  std::vector<std::string> out;
  for (unsigned i = 0; i < detail::kTemplateCount; ++i) out.emplace_back(detail::kTemplates[i].first);
  return out;
}

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, open - i));
    const std::string key(tmpl.substr(open + 2, close - open - 2));
    const auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("no value for placeholder {{" + key + "}}");
    out.append(it->second);
    i = close + 2;
  }
  return out;
}

}  // namespace normsgame::prompts
