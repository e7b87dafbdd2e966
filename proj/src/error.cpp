// Copyright 2026 The fallgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fallgen/error.hpp"

namespace fallgen {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DegenerateRotation: return "DegenerateRotation";
    case Errc::NotARotation: return "NotARotation";
    case Errc::InvalidSkeleton: return "InvalidSkeleton";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::SequenceTooShort: return "SequenceTooShort";
    case Errc::InvalidJitterRange: return "InvalidJitterRange";
    case Errc::DurationTooShort: return "DurationTooShort";
    case Errc::InvalidSequence: return "InvalidSequence";
    case Errc::ParseError: return "ParseError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::IoError: return "IoError";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotScalarLoss: return "NotScalarLoss";
    case Errc::DisconnectedGraph: return "DisconnectedGraph";
    case Errc::BackwardTwice: return "BackwardTwice";
    case Errc::FrameCountOutOfRange: return "FrameCountOutOfRange";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::DegenerateCovariance: return "DegenerateCovariance";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TooFewEmbeddings: return "TooFewEmbeddings";
  }
  return "Unknown";
}

}  // namespace fallgen
