#pragma once
#include <stdexcept>
#include <string>

namespace pmfg {

// exit status: 1 = bad input, 2 = numerical failure
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg, int status)
        : std::runtime_error(msg), code_(std::move(code)), status_(status) {}
    const std::string& code() const { return code_; }
    int exit_status() const { return status_; }
private:
    std::string code_;
    int status_;
};

struct InputError : Error {
    InputError(std::string code, const std::string& msg) : Error(std::move(code), msg, 1) {}
};
struct NumericalError : Error {
    NumericalError(std::string code, const std::string& msg) : Error(std::move(code), msg, 2) {}
};

#define PMFG_ERROR(Name, Base)                                                   \
    struct Name : Base {                                                         \
        explicit Name(const std::string& msg) : Base(#Name, msg) {}              \
    };

PMFG_ERROR(InvalidInput, InputError)
PMFG_ERROR(NonPositiveDenominator, InputError)
PMFG_ERROR(LabelMismatch, InputError)
PMFG_ERROR(EmptyDataset, InputError)
PMFG_ERROR(InsufficientHistory, InputError)
PMFG_ERROR(GaugeInfeasible, InputError)

PMFG_ERROR(NonUniqueStationary, NumericalError)
PMFG_ERROR(DivergedField, NumericalError)
PMFG_ERROR(DegenerateSystem, NumericalError)
PMFG_ERROR(RankDeficient, NumericalError)
PMFG_ERROR(SolverFailure, NumericalError)
PMFG_ERROR(ProxyInversionFailure, NumericalError)

#undef PMFG_ERROR

// errors that point at a line of an input file
struct LineError : InputError {
    LineError(std::string code, const std::string& msg, long line)
        : InputError(std::move(code), msg + " (line " + std::to_string(line) + ")"), line(line) {}
    long line;
};
struct ParseError : LineError {
    ParseError(const std::string& msg, long line) : LineError("ParseError", msg, line) {}
};
struct NegativeQuantity : LineError {
    NegativeQuantity(const std::string& msg, long line) : LineError("NegativeQuantity", msg, line) {}
};

struct ZeroOccupancy : NumericalError {
    ZeroOccupancy(int good, int port, long iteration = -1)
        : NumericalError("ZeroOccupancy", describe(good, port, iteration)),
          good(good), port(port), iteration(iteration) {}
    int good, port;
    long iteration;
private:
    static std::string describe(int n, int i, long it) {
        std::string s = "occupancy of good " + std::to_string(n) + " at port " + std::to_string(i) + " is not positive";
        if (it >= 0) s += " at iteration " + std::to_string(it);
        return s;
    }
};

}  // namespace pmfg
