#pragma once

#include "lacuna/bands.hpp"
#include "lacuna/coefficients.hpp"
#include "lacuna/config.hpp"
#include "lacuna/csv.hpp"
#include "lacuna/error.hpp"
#include "lacuna/floquet_green.hpp"
#include "lacuna/gap_asymptotics.hpp"
#include "lacuna/ode.hpp"
#include "lacuna/oracle.hpp"
#include "lacuna/perturbation.hpp"
#include "lacuna/quadrature.hpp"
#include "lacuna/verify.hpp"
