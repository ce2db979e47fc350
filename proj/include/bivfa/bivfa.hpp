#ifndef BIVFA_BIVFA_HPP
#define BIVFA_BIVFA_HPP

#include "bivfa/errors.hpp"
#include "bivfa/linalg.hpp"
#include "bivfa/prox.hpp"
#include "bivfa/composite.hpp"
#include "bivfa/apg.hpp"
#include "bivfa/dual.hpp"
#include "bivfa/solver.hpp"
#include "bivfa/problems.hpp"
#include "bivfa/reference.hpp"
#include "bivfa/io.hpp"

#endif  // BIVFA_BIVFA_HPP
