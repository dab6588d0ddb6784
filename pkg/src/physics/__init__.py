"""ODE bank, integrators and shared domain types"""
