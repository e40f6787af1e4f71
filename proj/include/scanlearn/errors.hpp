#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace scanlearn {

// Every failure raised by the engine derives from Error so callers can catch
// the whole family at once; the subclasses map one-to-one onto the error
// classes the CLI turns into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// context model
class UnknownEntryId : public Error {
 public:
  explicit UnknownEntryId(const std::string& id)
      : Error("unknown playbook entry id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class DuplicateEntryId : public Error {
 public:
  explicit DuplicateEntryId(const std::string& id)
      : Error("duplicate playbook entry id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class InvalidEntry : public Error {
 public:
  using Error::Error;
};

// configuration / data
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public InvalidConfig {
 public:
  using InvalidConfig::InvalidConfig;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus is empty") {}
};

class DuplicateTaskId : public Error {
 public:
  explicit DuplicateTaskId(const std::string& id)
      : Error("duplicate task id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MissingInsightTags : public Error {
 public:
  using Error::Error;
};

class MissingRunData : public Error {
 public:
  using Error::Error;
};

class InvalidK : public Error {
 public:
  using Error::Error;
};

// batch controller
class DegenerateFit : public Error {
 public:
  using Error::Error;
};

class NoSpeedup : public Error {
 public:
  using Error::Error;
};

// backends

// Where in a run a backend call failed. Fields that do not apply stay empty.
struct FailureLocus {
  std::optional<std::size_t> iteration;
  std::optional<std::string> task_id;
  std::optional<std::size_t> level;
  std::optional<std::size_t> group_index;
};

class BackendFailure : public Error {
 public:
  explicit BackendFailure(const std::string& what, FailureLocus locus = {})
      : Error(what), locus_(std::move(locus)) {}
  const FailureLocus& locus() const noexcept { return locus_; }

 private:
  FailureLocus locus_;
};

class TransportError : public BackendFailure {
 public:
  using BackendFailure::BackendFailure;
};

class RateLimited : public BackendFailure {
 public:
  using BackendFailure::BackendFailure;
};

class MalformedReply : public BackendFailure {
 public:
  using BackendFailure::BackendFailure;
};

namespace detail {
inline FailureLocus merge_locus(FailureLocus inner, const FailureLocus& outer) {
  if (!inner.iteration) inner.iteration = outer.iteration;
  if (!inner.task_id) inner.task_id = outer.task_id;
  if (!inner.level) inner.level = outer.level;
  if (!inner.group_index) inner.group_index = outer.group_index;
  return inner;
}
}  // namespace detail

/// Call from inside a catch block: rethrows the active backend exception
/// with `outer` filled into any empty locus fields, keeping its type.
/// Non-backend engine errors pass through untouched; foreign exceptions
/// become BackendFailure.
[[noreturn]] inline void rethrow_with_locus(const FailureLocus& outer) {
  try {
    throw;
  } catch (const RateLimited& e) {
    throw RateLimited(e.what(), detail::merge_locus(e.locus(), outer));
  } catch (const MalformedReply& e) {
    throw MalformedReply(e.what(), detail::merge_locus(e.locus(), outer));
  } catch (const TransportError& e) {
    throw TransportError(e.what(), detail::merge_locus(e.locus(), outer));
  } catch (const BackendFailure& e) {
    throw BackendFailure(e.what(), detail::merge_locus(e.locus(), outer));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendFailure(e.what(), outer);
  }
}

}  // namespace scanlearn
