# Providers package