#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace stackgame {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MalformedSpec : Error {
    using Error::Error;
};

struct ProjectionNotConverged : Error {
    using Error::Error;
};

struct SingularMatrix : Error {
    using Error::Error;
};

struct AssumptionViolated : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct NotConverged : Error {
    NotConverged(const std::string& what, std::vector<double> history, double alpha = -1.0)
        : Error(what), history(std::move(history)), alpha(alpha) {}
    std::vector<double> history;
    // homotopy parameter at which the failure happened, -1 outside continuation
    double alpha;
};

struct BlowUp : Error {
    BlowUp(const std::string& what, double escape_time) : Error(what), escape_time(escape_time) {}
    double escape_time;
};

}  // namespace stackgame
