#include "cloudmark/error.hpp"

namespace cloudmark {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

}  // namespace cloudmark
