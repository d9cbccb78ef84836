# This marks this directory as a package.
