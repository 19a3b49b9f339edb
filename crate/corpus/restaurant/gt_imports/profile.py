# Import block of the reference Python implementation of Profile.
from flask import Flask, jsonify, request
import pymongo
import requests
import os
