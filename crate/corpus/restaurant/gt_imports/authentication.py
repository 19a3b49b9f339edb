# Import block of the reference Python implementation of Authentication.
from flask import Flask, jsonify, request
import pymongo
import jwt
from werkzeug.security import generate_password_hash, check_password_hash
import datetime
import os
import re
