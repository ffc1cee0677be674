#ifndef GIFKIT_GIFKIT_HPP
#define GIFKIT_GIFKIT_HPP

#include "errors.hpp"
#include "sparse.hpp"
#include "graph.hpp"
#include "backbone.hpp"
#include "calculus.hpp"
#include "gif.hpp"
#include "eval.hpp"
#include "io.hpp"

#endif // GIFKIT_GIFKIT_HPP
