#pragma once

#include <stdexcept>
#include <string>

namespace walle {

// Input files or payloads that do not parse against their schema.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value violates a documented domain invariant.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was invoked outside its precondition (wrong state, wrong frame).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GroundingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UngraspableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Chat backend transport or protocol failure.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace walle
