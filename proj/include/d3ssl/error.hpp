#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace d3ssl {

// Root of every error raised by the library. Subclasses name the failure
// condition; the CLI maps ValidationError subclasses to exit code 1 and
// everything else to exit code 2.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error
{
public:
    using Error::Error;
};

#define D3SSL_DEFINE_ERROR(Name, Base)   \
    class Name : public Base             \
    {                                    \
    public:                              \
        using Base::Base;                \
    };

D3SSL_DEFINE_ERROR(DegenerateBox, ValidationError)
D3SSL_DEFINE_ERROR(EmptyProposalSet, ValidationError)
D3SSL_DEFINE_ERROR(ShapeMismatch, ValidationError)
D3SSL_DEFINE_ERROR(ShapeError, ValidationError)
D3SSL_DEFINE_ERROR(NoSurvivingProposals, ValidationError)
D3SSL_DEFINE_ERROR(EmptyFeature, ValidationError)
D3SSL_DEFINE_ERROR(NonUnitNorm, ValidationError)
D3SSL_DEFINE_ERROR(ZeroSimilarity, Error)
D3SSL_DEFINE_ERROR(InsufficientFixtures, ValidationError)
D3SSL_DEFINE_ERROR(EmptyBank, ValidationError)
D3SSL_DEFINE_ERROR(EmptyDataset, ValidationError)
D3SSL_DEFINE_ERROR(MissingImage, ValidationError)
D3SSL_DEFINE_ERROR(SpecError, ValidationError)
D3SSL_DEFINE_ERROR(EmptySource, ValidationError)
D3SSL_DEFINE_ERROR(ConfigError, ValidationError)
D3SSL_DEFINE_ERROR(DataError, Error)
D3SSL_DEFINE_ERROR(UnknownCommand, ValidationError)

#undef D3SSL_DEFINE_ERROR

// Malformed record in a line-oriented input file.
class ParseError : public ValidationError
{
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what)
        , m_line(line)
    {
    }

    std::size_t line() const { return m_line; }

private:
    std::size_t m_line;
};

} // namespace d3ssl
